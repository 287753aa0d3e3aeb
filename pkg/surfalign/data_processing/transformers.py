"""
Transformations from dataset windows and stimuli to model and baseline inputs.
"""
import logging

import numpy as np

from surfalign.data_processing.sanitizers import l2_normalize
from surfalign.errors import ArgumentError

logger = logging.getLogger(__name__)


def patchify(window, patching):
    """
    Gather patch values across frames.

    Args:
        window (numpy.ndarray): V x T frames (or B x V x T)
        patching (PatchIndex): tokenization grid on the window's mesh

    Returns:
        numpy.ndarray: N x (T*p) (or B x N x (T*p)); each row holds frame 0's
        p values in canonical patch order, then frame 1's, and so on
    """
    window = np.asarray(window)
    if window.shape[-2] != patching.num_fine_vertices:
        raise ArgumentError(
            f"window has {window.shape[-2]} vertices, patching expects {patching.num_fine_vertices}")
    gathered = window[..., patching.patches, :]  # [B] x N x p x T
    gathered = np.swapaxes(gathered, -1, -2)  # [B] x N x T x p
    return np.ascontiguousarray(gathered.reshape(*gathered.shape[:-2], -1))


def scatter_patch_values(values, patching):
    """
    Spread per-patch values back to the fine mesh, averaging at shared vertices.

    Args:
        values (numpy.ndarray): N (one value per patch) or N x p (one value per patch entry)
        patching (PatchIndex): grid the values belong to

    Returns:
        numpy.ndarray: float64 array of length V
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != patching.num_patches:
        raise ArgumentError(f"expected {patching.num_patches} patch values, got {values.shape[0]}")
    if values.ndim == 1:
        values = np.repeat(values[:, None], patching.patch_vertex_count, axis=1)
    totals = np.bincount(patching.patches.ravel(), weights=values.ravel(),
                         minlength=patching.num_fine_vertices)
    return totals / patching.multiplicity


def ridge_features(dataset, ids):
    """
    Flattened z-scored windows used by the ridge baseline.

    Returns:
        numpy.ndarray: len(ids) x (V*T) float64
    """
    windows = dataset.windows(ids, zscore=True)
    return windows.reshape(len(ids), -1).astype(np.float64)


def pooled_stimulus(dataset, ids, modality):
    """Mean over tokens of each stimulus sequence: len(ids) x dim."""
    return dataset.stimulus(ids, modality).astype(np.float64).mean(axis=1)


def stimulus_targets(dataset, ids, modality):
    """Unit-norm pooled stimulus features, a model-free target space for baselines."""
    return l2_normalize(pooled_stimulus(dataset, ids, modality))


def per_second_features(dataset, movie, modality='V'):
    """
    Stimulus features sampled once per second over one movie.

    Returns:
        numpy.ndarray: (clips_per_movie * clip_seconds) x dim; the clip
        showing at second s provides row s
    """
    table = {'V': dataset.video, 'A': dataset.audio}[modality]
    pooled = table[movie].astype(np.float64).mean(axis=1)  # clips x dim
    return np.repeat(pooled, dataset.config.clip_seconds, axis=0)
