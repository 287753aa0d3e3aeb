"""
Tests for closed-form ridge regression and the ridge retrieval baseline.
"""
import numpy as np
import pytest

from surfalign.data_processing.splits import split_experiment
from surfalign.data_processing.transformers import stimulus_targets
from surfalign.errors import ArgumentError, NumericError
from surfalign.evaluation.retrieval import CandidatePool, draw_trials
from surfalign.evaluation.ridge import feasible_m, ridge_baseline, ridge_fit, select_lambda
from surfalign.settings import Experiment, RetrievalTask


def _normal_equation_residual(X, Y, model):
    Xc, Yc = X - X.mean(axis=0), Y - Y.mean(axis=0)
    lhs = (Xc.T @ Xc + model.lam * np.eye(X.shape[1])) @ model.weights
    return np.max(np.abs(lhs - Xc.T @ Yc))


# -------------------------------------------------------------------------------------------------
# Ridge fit
# -------------------------------------------------------------------------------------------------

class TestRidgeFit:

    def test_exact_fit_at_zero_penalty(self, rng):
        X = rng.standard_normal((6, 6)) + 3 * np.eye(6)
        Y = rng.standard_normal((6, 2))
        model = ridge_fit(X, Y, 0.0, fit_intercept=False)
        assert np.allclose(model.predict(X), Y, atol=1e-9)

    def test_intercept_recovered(self, rng):
        X = rng.standard_normal((50, 3))
        Y = X @ np.array([[1.0], [-2.0], [0.5]]) + 4.0
        model = ridge_fit(X, Y, 0.0)
        assert np.allclose(model.weights[:, 0], [1.0, -2.0, 0.5])
        assert model.intercept[0] == pytest.approx(4.0)

    def test_shrinks_with_penalty(self, rng):
        X = rng.standard_normal((40, 5))
        Y = rng.standard_normal((40, 3))
        norms = [np.linalg.norm(ridge_fit(X, Y, lam).weights) for lam in (0.0, 1.0, 10.0, 100.0, 1e4)]
        assert all(a > b for a, b in zip(norms, norms[1:]))

    @pytest.mark.parametrize("n,d", [(40, 10), (10, 40)])
    def test_normal_equations(self, rng, n, d):
        X = rng.standard_normal((n, d))
        Y = rng.standard_normal((n, 4))
        model = ridge_fit(X, Y, 2.5)
        assert _normal_equation_residual(X, Y, model) < 1e-8

    def test_primal_and_dual_agree(self, rng):
        X = rng.standard_normal((12, 12))
        Y = rng.standard_normal((12, 2))
        primal = ridge_fit(X, Y, 3.0)
        wide = ridge_fit(np.hstack([X, np.zeros((12, 1))]), Y, 3.0)
        assert np.allclose(wide.weights[:12], primal.weights, atol=1e-10)
        assert np.allclose(wide.weights[12], 0.0)

    def test_matches_gradient_descent(self, rng):
        X = rng.standard_normal((30, 4))
        Y = rng.standard_normal((30, 2))
        lam = 5.0
        Xc, Yc = X - X.mean(axis=0), Y - Y.mean(axis=0)
        W = np.zeros((4, 2))
        step = 1.0 / (2 * (np.linalg.norm(Xc, 2) ** 2 + lam))
        for _ in range(5000):
            W -= step * 2 * (Xc.T @ (Xc @ W - Yc) + lam * W)
        assert np.allclose(ridge_fit(X, Y, lam).weights, W, atol=1e-8)

    def test_singular_primal(self, rng):
        x = rng.standard_normal((10, 1))
        with pytest.raises(NumericError):
            ridge_fit(np.hstack([x, x]), rng.standard_normal(10), 0.0)

    def test_singular_dual(self, rng):
        with pytest.raises(NumericError):
            ridge_fit(rng.standard_normal((5, 20)), rng.standard_normal((5, 2)), 0.0)

    def test_bad_inputs(self, rng):
        with pytest.raises(ArgumentError):
            ridge_fit(rng.standard_normal((5, 2)), rng.standard_normal((4, 1)), 1.0)
        with pytest.raises(ArgumentError):
            ridge_fit(rng.standard_normal((5, 2)), rng.standard_normal(5), -1.0)


class TestSelectLambda:

    def test_best_score(self):
        assert select_lambda({0.1: 20.0, 1.0: 60.0, 10.0: 40.0}) == 1.0

    def test_smallest_wins_ties(self):
        assert select_lambda({100.0: 70.0, 1.0: 70.0, 0.1: 50.0}) == 1.0

    def test_empty(self):
        with pytest.raises(ArgumentError):
            select_lambda({})


# -------------------------------------------------------------------------------------------------
# Baseline
# -------------------------------------------------------------------------------------------------

class TestRidgeBaseline:

    @pytest.fixture
    def targets(self, tiny_dataset):
        ids = np.arange(len(tiny_dataset))
        return {'V': stimulus_targets(tiny_dataset, ids, 'V'), 'A': stimulus_targets(tiny_dataset, ids, 'A')}

    def test_feasible_m_caps_candidates(self, tiny_dataset):
        pool = CandidatePool.from_ids(tiny_dataset, np.arange(24))
        assert feasible_m(pool, RetrievalTask(M=64, mode='soft')) == 13
        assert feasible_m(pool, RetrievalTask(M=4, mode='soft')) == 4
        assert feasible_m(pool, RetrievalTask(M=64, mode='hard')) == 10

    def test_fmri_to_video(self, tiny_dataset, targets):
        split = split_experiment(tiny_dataset, Experiment.E1)
        task = RetrievalTask(direction='f->V', M=8, mode='soft', trials=50)
        trials = draw_trials(CandidatePool.from_ids(tiny_dataset, split.test), task, seed=3)
        baseline = ridge_baseline(tiny_dataset, split, task, [1.0, 100.0], targets, trials=trials, seed=3)
        assert baseline.best_lambda in (1.0, 100.0)
        assert set(baseline.val_scores) == {1.0, 100.0}
        assert baseline.target_modality == 'V'
        norms = np.linalg.norm(baseline.fmri_embeddings[split.test], axis=1)
        assert np.allclose(norms, 1.0)
        assert np.all(baseline.fmri_embeddings[split.train] == 0.0)
        assert baseline.result.trials == 50
        assert 0.0 <= baseline.result.top(1) <= 100.0

    def test_audio_to_fmri_in_e2(self, tiny_dataset, targets):
        split = split_experiment(tiny_dataset, Experiment.E2)
        task = RetrievalTask(direction='A->f', M=3, mode='soft', trials=20)
        baseline = ridge_baseline(tiny_dataset, split, task, [10.0], targets, seed=0)
        assert baseline.best_lambda == 10.0
        assert baseline.target_modality == 'A'
        assert baseline.result is None
        assert set(baseline.embeddings(targets)) == {'f', 'V', 'A'}
