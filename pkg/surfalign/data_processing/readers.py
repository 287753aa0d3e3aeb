"""
File readers for externally computed stimulus embeddings and run artifacts.
"""
import os
import glob
import logging

import numpy as np

from surfalign.data_processing.sanitizers import check_finite
from surfalign.errors import ArgumentError

logger = logging.getLogger(__name__)


def get_latest_file(directory, pattern="*"):
    """
    Get the most recent file in a directory matching the pattern.

    Args:
        directory (str): Directory to search
        pattern (str): File pattern to match

    Returns:
        str: Path to the most recent file, or None if no files found
    """
    files = glob.glob(os.path.join(directory, pattern))
    if not files:
        return None
    files.sort(key=os.path.getmtime, reverse=True)
    return files[0]


def read_embedding_file(file_path, key):
    """
    Read a stimulus embedding array.

    Args:
        file_path (str): ``.npy`` array or ``.npz`` archive
        key (str): array name inside an ``.npz`` archive ('video' or 'audio')

    Returns:
        numpy.ndarray: movies x clips x tokens x dim float32
    """
    logger.info(f"Reading {key} embeddings: {file_path}")
    if file_path.endswith('.npz'):
        with np.load(file_path) as archive:
            if key not in archive:
                raise ArgumentError(f"{file_path} has no '{key}' array (found {sorted(archive.files)})")
            array = archive[key]
    else:
        array = np.load(file_path)
    if array.ndim != 4:
        raise ArgumentError(f"{key} embeddings must be movies x clips x tokens x dim, got {array.shape}")
    return check_finite(array, f"{key} embeddings").astype(np.float32)


def import_stimulus_embeddings(dataset, video=None, audio=None):
    """
    Replace a dataset's stimulus sequences with precomputed embeddings.

    Args:
        dataset (TripletDataset): dataset to update in place
        video (str, optional): file holding video embeddings
        audio (str, optional): file holding audio embeddings

    Returns:
        TripletDataset: the same dataset
    """
    cfg = dataset.config
    for key, path in (('video', video), ('audio', audio)):
        if path is None:
            continue
        array = read_embedding_file(path, key)
        if array.shape[:2] != (cfg.num_movies, cfg.clips_per_movie):
            raise ArgumentError(
                f"{key} embeddings cover {array.shape[:2]} movies x clips, "
                f"dataset has {(cfg.num_movies, cfg.clips_per_movie)}")
        setattr(dataset, key, array)
        updates = {f'{key}_tokens': int(array.shape[2]), f'{key}_dim': int(array.shape[3])}
        dataset.config = cfg = cfg.model_copy(update=updates)
        logger.info(f"Imported {key} embeddings {array.shape} from {path}")
    return dataset
