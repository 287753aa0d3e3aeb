"""
Normalisation and sanity checks applied to windows and stimulus embeddings.
"""
import logging

import numpy as np

from surfalign.errors import ArgumentError

logger = logging.getLogger(__name__)


def zscore_window(window):
    """
    Z-score a window over all of its vertices and frames.

    Args:
        window (numpy.ndarray): V x T (or B x V x T) values

    Returns:
        numpy.ndarray: float32 array with mean 0 and std 1 per window; a
        constant window is only centred
    """
    window = np.asarray(window, dtype=np.float64)
    axes = tuple(range(window.ndim - 2, window.ndim))
    mean = window.mean(axis=axes, keepdims=True)
    std = window.std(axis=axes, keepdims=True)
    flat = std < 1e-12
    if np.any(flat):
        logger.warning(f"{int(flat.sum())} constant window(s) were centred but not scaled")
    out = (window - mean) / np.where(flat, 1.0, std)
    return out.astype(np.float32)


def check_finite(array, name="array"):
    array = np.asarray(array)
    if not np.all(np.isfinite(array)):
        raise ArgumentError(f"{name} contains non-finite values")
    return array


def l2_normalize(rows, eps=1e-12):
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    if np.any(norms < eps):
        raise ArgumentError("cannot normalise a zero vector")
    return rows / norms
