"""
Train/validation/test protocols for the three generalisation experiments.

E1 holds out subjects, E2 holds out the second half of every movie, E3 holds
out both at once.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from surfalign.errors import ArgumentError
from surfalign.settings import Experiment

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (124, 25, 25)
RIDGE_HOLDOUT_FRACTION = 0.2


@dataclass
class ExperimentSplit:
    experiment: Experiment
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def sizes(self):
        return {'train': len(self.train), 'val': len(self.val), 'test': len(self.test)}

    def ids(self, part):
        return getattr(self, part)


def largest_remainder(total, ratios):
    """
    Integer group sizes proportional to ``ratios`` summing to ``total``.

    Leftover units go to the largest fractional parts, earlier groups first on ties.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios < 0) or ratios.sum() <= 0:
        raise ArgumentError(f"invalid split ratios {tuple(ratios)}")
    quotas = total * ratios / ratios.sum()
    sizes = np.floor(quotas).astype(int)
    remainder = quotas - sizes
    order = sorted(range(len(ratios)), key=lambda i: (-remainder[i], i))
    for i in order[:total - sizes.sum()]:
        sizes[i] += 1
    return sizes


def partition_subjects(num_subjects, ratios=DEFAULT_RATIOS, seed: Optional[int] = None):
    sizes = largest_remainder(num_subjects, ratios)
    for size, ratio in zip(sizes, ratios):
        if ratio > 0 and size == 0:
            raise ArgumentError(
                f"{num_subjects} subjects are too few to split with ratios {tuple(ratios)}")
    subjects = np.arange(num_subjects)
    if seed is not None:
        subjects = np.random.default_rng(seed).permutation(subjects)
    bounds = np.cumsum(sizes)
    return (np.sort(subjects[:bounds[0]]), np.sort(subjects[bounds[0]:bounds[1]]),
            np.sort(subjects[bounds[1]:bounds[2]]))


def split_experiment(dataset, experiment, ratios: Sequence[float] = DEFAULT_RATIOS, seed: Optional[int] = None):
    """
    Split a dataset for one of the generalisation experiments.

    Args:
        dataset (TripletDataset): dataset to split
        experiment (Experiment): E1, E2 or E3
        ratios (tuple): train/val/test subject proportions (E1 and E3)
        seed (int, optional): shuffles subjects before partitioning; ids in order when None

    Returns:
        ExperimentSplit: triplet ids per part
    """
    experiment = Experiment(experiment)
    meta = dataset.metadata
    cfg = dataset.config
    if experiment in (Experiment.E2, Experiment.E3) and cfg.clips_per_movie < 2:
        raise ArgumentError("at least 2 clips per movie are needed to split movie halves")
    first_half = (meta['clip'] < cfg.clips_per_movie / 2).to_numpy()

    if experiment == Experiment.E2:
        ids = meta['triplet_id'].to_numpy()
        split = ExperimentSplit(experiment, train=ids[first_half], val=ids[:0], test=ids[~first_half])
    else:
        train_s, val_s, test_s = partition_subjects(cfg.num_subjects, ratios, seed)
        subject = meta['subject'].to_numpy()
        in_train = np.isin(subject, train_s)
        in_val = np.isin(subject, val_s)
        in_test = np.isin(subject, test_s)
        ids = meta['triplet_id'].to_numpy()
        if experiment == Experiment.E1:
            split = ExperimentSplit(experiment, train=ids[in_train], val=ids[in_val], test=ids[in_test])
        else:
            split = ExperimentSplit(experiment, train=ids[in_train & first_half],
                                    val=ids[in_val & ~first_half], test=ids[in_test & ~first_half])

    logger.info(f"Split {experiment.value}: {split.sizes()}")
    return split


def validation_ids(dataset, split, fraction=RIDGE_HOLDOUT_FRACTION):
    """
    Validation ids, carving them out of the training clips when the split has none.

    Returns:
        tuple: (train ids, validation ids); the last ``fraction`` of each
        movie's training clips validate when split.val is empty
    """
    if len(split.val):
        return split.train, split.val
    meta = dataset.metadata.iloc[split.train]
    last_clip = meta.groupby('movie')['clip'].transform('max')
    first_clip = meta.groupby('movie')['clip'].transform('min')
    span = last_clip - first_clip + 1
    cut = first_clip + np.floor(span * (1.0 - fraction)).astype(int)
    held = (meta['clip'] >= cut).to_numpy()
    if held.all() or not held.any():
        raise ArgumentError("training clips are too few to hold out a validation set")
    return split.train[~held], split.train[held]
