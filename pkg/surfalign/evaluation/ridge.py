"""
Ridge regression and the ridge retrieval baseline.

The baseline replaces the fMRI encoder and mapper with a linear map from the
flattened z-scored window to the other modality's CLIP space.
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy import linalg

from surfalign.data_processing.sanitizers import l2_normalize
from surfalign.data_processing.splits import validation_ids
from surfalign.data_processing.transformers import ridge_features
from surfalign.errors import ArgumentError, NumericError
from surfalign.evaluation.retrieval import CandidatePool, draw_trials, evaluate_retrieval
from surfalign.settings import Direction

logger = logging.getLogger(__name__)


@dataclass
class RidgeModel:
    weights: np.ndarray  # d x q
    intercept: np.ndarray  # q
    x_mean: np.ndarray  # d
    lam: float

    def predict(self, X):
        return (np.asarray(X, dtype=np.float64) - self.x_mean) @ self.weights + self.intercept


def _solve_spd(A, B):
    with warnings.catch_warnings():
        warnings.simplefilter('error', linalg.LinAlgWarning)
        try:
            return linalg.solve(A, B, assume_a='pos')
        except (linalg.LinAlgError, linalg.LinAlgWarning) as e:
            raise NumericError(f"ridge system is singular or ill-conditioned ({e}); use lambda > 0")


def ridge_fit(X, Y, lam, fit_intercept=True):
    """
    Closed-form ridge regression.

    Args:
        X (numpy.ndarray): n x d inputs
        Y (numpy.ndarray): n x q targets (a 1-D target is treated as q = 1)
        lam (float): penalty, >= 0
        fit_intercept (bool): centre X and Y and fit an intercept

    Returns:
        RidgeModel: W = (Xc'Xc + lam I)^-1 Xc'Yc; solved in the dual when d > n
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[0] != Y.shape[0]:
        raise ArgumentError(f"ridge needs n x d inputs matching n x q targets, got {X.shape} and {Y.shape}")
    if lam < 0:
        raise ArgumentError(f"ridge penalty must be non-negative, got {lam}")
    n, d = X.shape
    x_mean = X.mean(axis=0) if fit_intercept else np.zeros(d)
    y_mean = Y.mean(axis=0) if fit_intercept else np.zeros(Y.shape[1])
    Xc, Yc = X - x_mean, Y - y_mean

    if d <= n:
        W = _solve_spd(Xc.T @ Xc + lam * np.eye(d), Xc.T @ Yc)
    else:
        if lam == 0:
            raise NumericError(f"ridge system with {d} features and {n} samples is singular at lambda=0; use lambda > 0")
        W = Xc.T @ _solve_spd(Xc @ Xc.T + lam * np.eye(n), Yc)
    return RidgeModel(weights=W, intercept=y_mean, x_mean=x_mean, lam=float(lam))


def select_lambda(scores):
    """Best-scoring lambda; the smallest lambda wins ties."""
    if not scores:
        raise ArgumentError("no lambda scores to select from")
    return max(sorted(scores), key=lambda lam: scores[lam])


def feasible_m(pool, task):
    """Largest candidate count every positive in ``pool`` can support, capped at task.M."""
    smallest = min(pool.admissible(s, task).size for s in range(len(pool.movie)))
    return min(task.M, smallest + 1)


@dataclass
class RidgeBaseline:
    model: RidgeModel
    best_lambda: float
    val_scores: Dict[float, float]
    fmri_embeddings: np.ndarray  # indexed by triplet id
    target_modality: str
    result: Optional[object] = field(default=None)

    def embeddings(self, stimulus_embeddings):
        """Embedding table for evaluate_retrieval with the ridge predictions on the fMRI side."""
        table = dict(stimulus_embeddings)
        table['f'] = self.fmri_embeddings
        return table


def ridge_baseline(dataset, split, task, lambdas, target_embeddings, test_ids=None, trials=None, seed=0):
    """
    Fit the ridge baseline for one retrieval direction and evaluate it.

    Args:
        dataset (TripletDataset): triplets
        split (ExperimentSplit): train/val/test ids
        task (RetrievalTask): direction, M and sampling mode
        lambdas (list): penalty grid
        target_embeddings (dict): modality -> unit embeddings indexed by triplet id
        test_ids (array-like, optional): ids to embed, split.test by default
        trials (list, optional): candidate sets shared with the model evaluation
        seed (int): rng seed for validation trials

    Returns:
        RidgeBaseline: fitted model, selected lambda, validation top-1 per lambda,
        predicted fMRI-side embeddings and (when trials are given) the test result
    """
    direction = Direction(task.direction)
    other = direction.target if direction.query == 'f' else direction.query
    if other == 'f':
        raise ArgumentError(f"direction {direction.value} has no stimulus side")
    train_ids, val_ids = validation_ids(dataset, split)
    X = ridge_features(dataset, train_ids)
    Y = target_embeddings[other][train_ids]

    val_pool = CandidatePool.from_ids(dataset, val_ids)
    m_val = feasible_m(val_pool, task)
    if m_val < 2:
        raise ArgumentError("validation pool cannot form candidate sets for lambda selection")
    val_task = task.model_copy(update={'M': m_val, 'trials': min(task.trials, 500)})
    val_trials = draw_trials(val_pool, val_task, seed)
    X_val = ridge_features(dataset, val_ids)

    scores, models = {}, {}
    for lam in lambdas:
        model = ridge_fit(X, Y, lam)
        pred = np.zeros((len(dataset), Y.shape[1]))
        pred[val_ids] = l2_normalize(model.predict(X_val))
        table = dict(target_embeddings)
        table['f'] = pred
        scores[float(lam)] = evaluate_retrieval(val_trials, table, val_task).top(1)
        models[float(lam)] = model
    best = select_lambda(scores)
    logger.info(f"Ridge {direction.value}: selected lambda {best:g} (val top-1 {scores[best]:.1f}%)")

    test_ids = np.asarray(split.test if test_ids is None else test_ids, dtype=np.int64)
    embeddings = np.zeros((len(dataset), Y.shape[1]))
    embeddings[test_ids] = l2_normalize(models[best].predict(ridge_features(dataset, test_ids)))
    baseline = RidgeBaseline(model=models[best], best_lambda=best, val_scores=scores,
                             fmri_embeddings=embeddings, target_modality=other)
    if trials is not None:
        baseline.result = evaluate_retrieval(trials, baseline.embeddings(target_embeddings), task)
    return baseline
