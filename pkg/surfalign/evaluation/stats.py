"""
Significance tests for comparing methods and testing correlation maps.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from surfalign.errors import ArgumentError

logger = logging.getLogger(__name__)

TTEST_COLUMNS = ['comparison', 'direction', 'mode', 'M', 'mean_a', 'mean_b', 't', 'p_raw', 'p_bonferroni']


@dataclass
class TTestResult:
    t: float
    p_raw: float
    p_bonferroni: float

    def as_tuple(self):
        return self.t, self.p_raw, self.p_bonferroni


def bonferroni(p, num_comparisons):
    """Bonferroni-corrected p-value(s), capped at 1."""
    if num_comparisons < 1:
        raise ArgumentError(f"num_comparisons must be >= 1, got {num_comparisons}")
    return np.minimum(1.0, np.asarray(p, dtype=np.float64) * num_comparisons)


def two_sample_ttest(a, b, num_comparisons=1):
    """
    Welch's two-sample t-test with Bonferroni correction.

    Args:
        a (array-like): samples of group a (>= 2)
        b (array-like): samples of group b (>= 2)
        num_comparisons (int): comparisons reported alongside this one

    Returns:
        TTestResult: t statistic, two-sided p and corrected p
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ArgumentError(f"each group needs at least 2 samples, got {a.size} and {b.size}")
    var_a, var_b = a.var(ddof=1), b.var(ddof=1)
    if var_a == 0 and var_b == 0:
        # no spread: equal means are indistinguishable, different means are certain
        if a.mean() == b.mean():
            return TTestResult(t=0.0, p_raw=1.0, p_bonferroni=1.0)
        t = np.inf if a.mean() > b.mean() else -np.inf
        return TTestResult(t=float(t), p_raw=0.0, p_bonferroni=0.0)
    t, p = stats.ttest_ind(a, b, equal_var=False)
    return TTestResult(t=float(t), p_raw=float(p), p_bonferroni=float(bonferroni(p, num_comparisons)))


def wilcoxon_greater(samples, axis=0):
    """
    One-sided Wilcoxon signed-rank test of samples > 0 along ``axis``.

    Returns:
        numpy.ndarray: p-values; columns with all-zero samples get p = 1
    """
    samples = np.asarray(samples, dtype=np.float64)
    samples = np.moveaxis(samples, axis, 0)
    if samples.shape[0] < 2:
        raise ArgumentError("Wilcoxon test needs at least 2 paired samples")
    flat = samples.reshape(samples.shape[0], -1)
    pvals = np.ones(flat.shape[1])
    nonzero = np.any(flat != 0, axis=0)
    if nonzero.any():
        result = stats.wilcoxon(flat[:, nonzero], alternative='greater', axis=0)
        pvals[nonzero] = np.nan_to_num(result.pvalue, nan=1.0)
    return pvals.reshape(samples.shape[1:])
