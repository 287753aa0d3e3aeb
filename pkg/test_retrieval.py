"""
Tests for candidate sampling, ranking and top-K accuracy.
"""
import numpy as np
import pytest

from conftest import tiny_world_config
from surfalign.data_processing.datagen import metadata_table
from surfalign.errors import ArgumentError
from surfalign.evaluation.retrieval import (
    CandidatePool,
    chance_rows,
    draw_trials,
    evaluate_retrieval,
    random_embeddings,
    rank_candidates,
    result_from_ranks,
    sample_candidates,
    topk_accuracy,
)
from surfalign.settings import RetrievalTask


@pytest.fixture
def meta():
    return metadata_table(tiny_world_config(num_subjects=3))


@pytest.fixture
def pool(meta):
    return CandidatePool(meta)


def _stimulus_embeddings(meta):
    """One-hot vector per (movie, clip), shared by every subject."""
    stim = (meta['movie'] * (meta['clip'].max() + 1) + meta['clip']).to_numpy()
    return np.eye(stim.max() + 1)[stim]


# -------------------------------------------------------------------------------------------------
# Candidate sampling
# -------------------------------------------------------------------------------------------------

class TestSampleCandidates:

    def test_soft_negatives_from_other_movies(self, pool, meta):
        task = RetrievalTask(M=8, mode='soft', trials=200)
        for trial in draw_trials(pool, task, seed=1):
            rows = meta.iloc[trial.ids]
            positive = meta.iloc[trial.positive_id]
            negatives = rows.drop(index=trial.positive_id)
            assert len(trial.ids) == 8
            assert (negatives['movie'] != positive['movie']).all()
            assert not rows.duplicated(subset=['movie', 'clip']).any()

    def test_hard_negatives_outside_buffer(self, pool, meta):
        task = RetrievalTask(M=4, mode='hard', buffer_seconds=3, trials=200)
        for trial in draw_trials(pool, task, seed=2):
            positive = meta.iloc[trial.positive_id]
            negatives = meta.iloc[trial.ids].drop(index=trial.positive_id)
            assert (negatives['movie'] == positive['movie']).all()
            assert (np.abs(negatives['offset'] - positive['offset']) > 3).all()

    def test_negatives_prefer_positive_subject(self, pool, meta):
        task = RetrievalTask(M=6, mode='soft', trials=50)
        for trial in draw_trials(pool, task, seed=3):
            assert set(meta.iloc[trial.ids]['subject']) == {meta.iloc[trial.positive_id]['subject']}

    def test_fallback_subject_when_missing(self, meta):
        keep = ~((meta['subject'] == 2) & (meta['movie'] == 1))
        pool = CandidatePool(meta[keep])
        trial = sample_candidates(meta.index[(meta['subject'] == 2) & (meta['movie'] == 0)][0], pool,
                                  RetrievalTask(M=4, mode='soft'), np.random.default_rng(0))
        negatives = meta.iloc[trial.ids].drop(index=trial.positive_id)
        assert set(negatives['subject']) == {0}

    def test_shortfall_reported(self, pool):
        with pytest.raises(ArgumentError, match="short by 1"):
            sample_candidates(0, pool, RetrievalTask(M=14, mode='soft'), np.random.default_rng(0))

    def test_hard_shortfall(self, pool):
        # 12 clips per movie leave at most 9 clips beyond the buffer
        with pytest.raises(ArgumentError):
            sample_candidates(0, pool, RetrievalTask(M=12, mode='hard'), np.random.default_rng(0))

    def test_positive_outside_pool(self, meta):
        pool = CandidatePool(meta[meta['subject'] == 0])
        with pytest.raises(ArgumentError):
            sample_candidates(int(meta.index[-1]), pool, RetrievalTask(M=2), np.random.default_rng(0))

    def test_empty_pool(self, meta):
        with pytest.raises(ArgumentError):
            CandidatePool(meta.iloc[:0])

    def test_trials_reproducible(self, pool):
        task = RetrievalTask(M=8, trials=20)
        a, b = draw_trials(pool, task, seed=9), draw_trials(pool, task, seed=9)
        assert all(np.array_equal(x.ids, y.ids) and x.positive_index == y.positive_index for x, y in zip(a, b))


# -------------------------------------------------------------------------------------------------
# Ranking and accuracy
# -------------------------------------------------------------------------------------------------

class TestRanking:

    def test_ties_go_to_lower_index(self):
        order, probs = rank_candidates(np.array([1.0, 0.0]), np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 0.0]]), 0.07)
        assert order.tolist() == [2, 0, 1]
        assert probs.sum() == pytest.approx(1.0)
        assert probs[0] == pytest.approx(probs[1])

    def test_topk_and_ci(self):
        mean, ci = topk_accuracy([1, 1, 2, 3], 1)
        assert mean == pytest.approx(50.0)
        assert ci == pytest.approx(100 * 1.96 * np.sqrt(0.25 / 4))
        assert topk_accuracy([1, 1, 2, 3], 3) == (100.0, 0.0)
        with pytest.raises(ArgumentError):
            topk_accuracy([], 1)

    def test_reported_ks_include_m(self):
        result = result_from_ranks(np.array([1, 2, 4, 4]), RetrievalTask(M=4, ks=[1, 5, 10]))
        assert sorted(result.accuracy) == [1, 4]
        assert result.top(4) == 100.0
        assert result.rank_histogram.tolist() == [1, 1, 0, 2]
        assert [row['K'] for row in chance_rows(RetrievalTask(M=4, ks=[1, 5]))] == [1, 4]

    def test_oracle_retrieves_everything(self, pool, meta):
        emb = _stimulus_embeddings(meta)
        for direction in ('f->V', 'V->f'):
            task = RetrievalTask(direction=direction, M=8, trials=100)
            result = evaluate_retrieval(draw_trials(pool, task, seed=4), {'f': emb, 'V': emb}, task)
            assert result.top(1) == 100.0

    def test_random_embeddings_at_chance(self, pool, meta):
        task = RetrievalTask(M=8, trials=10_000, ks=[1, 3])
        trials = draw_trials(pool, task, seed=5)
        emb = {'f': random_embeddings(len(meta), 16, seed=5, stream=0),
               'V': random_embeddings(len(meta), 16, seed=5, stream=1)}
        result = evaluate_retrieval(trials, emb, task)
        for k in (1, 3):
            p = k / 8
            se = 100 * np.sqrt(p * (1 - p) / task.trials)
            assert abs(result.top(k) - 100 * p) < 3 * se
        tops = [result.top(k) for k in sorted(result.accuracy)]
        assert tops == sorted(tops)
        assert result.top(8) == 100.0

    def test_random_streams_differ(self):
        a = random_embeddings(5, 4, seed=1, stream=0)
        assert not np.allclose(a, random_embeddings(5, 4, seed=1, stream=1))
        assert np.allclose(np.linalg.norm(a, axis=1), 1.0)
