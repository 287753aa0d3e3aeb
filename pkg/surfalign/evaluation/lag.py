"""
Temporal lag scan.

For each candidate lag the per-second stimulus features of the training movies
are regressed onto every vertex's series shifted by that lag; the fit then
predicts the held-out movie and is scored by per-vertex Pearson correlation.
The lag with the highest mean correlation estimates the hemodynamic delay.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd

from surfalign.data_processing.transformers import per_second_features
from surfalign.errors import ArgumentError, BoundsError
from surfalign.evaluation.ridge import ridge_fit
from surfalign.evaluation.stats import bonferroni, wilcoxon_greater
from surfalign.settings import LagConfig

logger = logging.getLogger(__name__)

LAG_COLUMNS = ['lag', 'mean_r', 'excluded', 'vertices']
_CONSTANT_STD = 1e-12


@dataclass
class LagScanResult:
    table: pd.DataFrame
    maps: Dict[int, np.ndarray]  # lag -> V mean correlation over subjects
    subject_maps: Dict[int, np.ndarray]  # lag -> subjects x V
    holdout_movie: int
    best_lag: int = field(init=False)

    def __post_init__(self):
        self.best_lag = int(self.table.loc[self.table['mean_r'].idxmax(), 'lag'])


@dataclass
class LagSignificance:
    p_raw: np.ndarray
    p_corrected: np.ndarray
    significant: int
    alpha: float


def vertex_correlation(pred, actual):
    """
    Pearson r per column.

    Returns:
        tuple: (r per column with NaN where either column is constant, excluded mask)
    """
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    pc = pred - pred.mean(axis=0)
    ac = actual - actual.mean(axis=0)
    sp = np.sqrt(np.sum(pc ** 2, axis=0))
    sa = np.sqrt(np.sum(ac ** 2, axis=0))
    excluded = (sp <= _CONSTANT_STD * np.sqrt(len(pred))) | (sa <= _CONSTANT_STD * np.sqrt(len(actual)))
    r = np.full(pred.shape[1], np.nan)
    keep = ~excluded
    r[keep] = np.sum(pc[:, keep] * ac[:, keep], axis=0) / (sp[keep] * sa[keep])
    return r, excluded


def lagged_targets(series, lag, seconds):
    """``seconds`` x V frames starting ``lag`` seconds into the series."""
    if lag < 0 or lag + seconds > series.num_frames:
        raise BoundsError(f"lag {lag} needs {lag + seconds} frames, series has {series.num_frames}")
    return series.values[:, lag:lag + seconds].T.astype(np.float64)


def _subject_map(dataset, subject, lag, train_movies, holdout, features, lam, seconds):
    X = np.concatenate([features[m] for m in train_movies])
    Y = np.concatenate([lagged_targets(dataset.series[(subject, m)], lag, seconds) for m in train_movies])
    model = ridge_fit(X, Y, lam)
    pred = model.predict(features[holdout])
    actual = lagged_targets(dataset.series[(subject, holdout)], lag, seconds)
    return vertex_correlation(pred, actual)


def lag_scan(dataset, config: LagConfig, modality='V', subjects=None, threads: Optional[int] = None):
    """
    Score candidate lags by held-out-movie prediction accuracy.

    Args:
        dataset (TripletDataset): series and stimulus features
        config (LagConfig): lags, ridge penalty and held-out movie
        modality (str): stimulus features to regress from ('V' or 'A')
        subjects (list, optional): subjects to include, all by default
        threads (int, optional): worker threads across subjects

    Returns:
        LagScanResult: table (lag, mean_r, excluded, vertices), mean and
        per-subject correlation maps per lag, argmax lag
    """
    cfg = dataset.config
    if cfg.num_movies < 2:
        raise ArgumentError("lag scan needs at least two movies (one held out)")
    if not config.lags:
        raise ArgumentError("lag scan needs at least one lag")
    holdout = config.holdout_movie % cfg.num_movies
    train_movies = [m for m in range(cfg.num_movies) if m != holdout]
    subjects = list(range(cfg.num_subjects)) if subjects is None else [int(s) for s in subjects]
    seconds = cfg.clips_per_movie * cfg.clip_seconds
    features = {m: per_second_features(dataset, m, modality) for m in range(cfg.num_movies)}
    logger.info(f"Lag scan over {list(config.lags)} s: {len(subjects)} subjects, "
                f"holding out movie {holdout}, lambda {config.ridge_lambda:g}")

    rows, maps, subject_maps = [], {}, {}
    for lag in config.lags:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda s: _subject_map(dataset, s, int(lag), train_movies, holdout, features,
                                       config.ridge_lambda, seconds), subjects))
        per_subject = np.stack([r for r, _ in results])
        excluded = int(sum(int(mask.sum()) for _, mask in results))
        if excluded:
            logger.warning(f"lag {lag}: {excluded} constant vertex series excluded from the correlation")
        with np.errstate(invalid='ignore'):
            mean_map = np.nanmean(per_subject, axis=0) if np.isfinite(per_subject).any() else \
                np.full(per_subject.shape[1], np.nan)
        mean_r = float(np.nanmean(per_subject)) if np.isfinite(per_subject).any() else float('nan')
        rows.append({'lag': int(lag), 'mean_r': mean_r, 'excluded': excluded, 'vertices': per_subject.shape[1]})
        maps[int(lag)] = mean_map
        subject_maps[int(lag)] = per_subject
        logger.info(f"lag {lag} s: mean r {mean_r:.4f}")

    table = pd.DataFrame(rows, columns=LAG_COLUMNS)
    if table['mean_r'].isna().all():
        raise ArgumentError("no lag produced a defined correlation")
    result = LagScanResult(table=table, maps=maps, subject_maps=subject_maps, holdout_movie=holdout)
    logger.info(f"Best lag {result.best_lag} s")
    return result


def lag_significance(subject_maps, alpha=0.05):
    """
    Vertex-wise test of positive correlation across subjects.

    Args:
        subject_maps (numpy.ndarray): subjects x V correlations (NaN for excluded vertices)
        alpha (float): family-wise error rate

    Returns:
        LagSignificance: one-sided Wilcoxon p per vertex, Bonferroni-corrected
        over vertices, and the number of vertices below alpha
    """
    maps = np.nan_to_num(np.asarray(subject_maps, dtype=np.float64), nan=0.0)
    p_raw = wilcoxon_greater(maps, axis=0)
    p_corrected = bonferroni(p_raw, maps.shape[1])
    significant = int(np.sum(p_corrected < alpha))
    logger.info(f"{significant}/{maps.shape[1]} vertices significant at alpha {alpha} (Bonferroni)")
    return LagSignificance(p_raw=p_raw, p_corrected=p_corrected, significant=significant, alpha=alpha)
