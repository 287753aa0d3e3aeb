"""
Cross-modal retrieval: candidate sampling, ranking and top-K accuracy.

A trial pairs one positive triplet with M-1 negatives. Soft negatives come
from other movies; hard negatives come from the same movie outside a buffer
of +/- buffer_seconds around the positive. Candidate sets hold distinct
stimuli; when the target side is fMRI each negative's window is taken from the
positive's subject where the pool has one.
"""
import os
import sys
import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import pandas as pd
import torch

from surfalign.data_processing.transformers import patchify
from surfalign.errors import ArgumentError
from surfalign.settings import Direction, RetrievalTask, SamplingMode

# Add the project root to the Python path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..')))
from config import CI_Z

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ['direction', 'mode', 'M', 'K', 'mean', 'ci', 'trials']


class CandidatePool:
    """
    Triplets eligible for a retrieval experiment, indexed by stimulus.

    Args:
        metadata (pandas.DataFrame): rows (triplet_id, subject, movie, clip, offset) of the pool
    """

    def __init__(self, metadata):
        if metadata.empty:
            raise ArgumentError("retrieval pool is empty")
        self.metadata = metadata.reset_index(drop=True)
        stimuli = self.metadata[['movie', 'clip', 'offset']].drop_duplicates(['movie', 'clip'])
        stimuli = stimuli.sort_values(['movie', 'clip']).reset_index(drop=True)
        self.movie = stimuli['movie'].to_numpy()
        self.clip = stimuli['clip'].to_numpy()
        self.offset = stimuli['offset'].to_numpy()
        self.subjects = np.sort(self.metadata['subject'].unique())

        stim_index = pd.Series(np.arange(len(stimuli)),
                               index=pd.MultiIndex.from_frame(stimuli[['movie', 'clip']]))
        rows_stim = stim_index.loc[list(zip(self.metadata['movie'], self.metadata['clip']))].to_numpy()
        rows_subj = np.searchsorted(self.subjects, self.metadata['subject'].to_numpy())
        # stimulus x subject -> triplet id (-1 when that subject did not see it in the pool)
        self.lookup = np.full((len(stimuli), len(self.subjects)), -1, dtype=np.int64)
        self.lookup[rows_stim, rows_subj] = self.metadata['triplet_id'].to_numpy()
        self._row_of = dict(zip(self.metadata['triplet_id'].to_numpy(), range(len(self.metadata))))
        self._stim_of_row = rows_stim

    @classmethod
    def from_ids(cls, dataset, ids):
        return cls(dataset.metadata.iloc[np.asarray(ids, dtype=np.int64)])

    @property
    def ids(self):
        return self.metadata['triplet_id'].to_numpy()

    def positive(self, triplet_id):
        row = self._row_of.get(int(triplet_id))
        if row is None:
            raise ArgumentError(f"triplet {triplet_id} is not in the retrieval pool")
        return self.metadata.iloc[row], self._stim_of_row[row]

    def admissible(self, stim, task):
        """Indices of stimuli that may serve as negatives for positive stimulus ``stim``."""
        if task.mode == SamplingMode.SOFT:
            ok = self.movie != self.movie[stim]
        else:
            ok = (self.movie == self.movie[stim]) & (np.abs(self.offset - self.offset[stim]) > task.buffer_seconds)
        ok[stim] = False
        return np.flatnonzero(ok)

    def representative(self, stims, subject):
        """One triplet id per stimulus, from ``subject`` where possible, else the lowest subject id."""
        table = self.lookup[stims]
        col = np.searchsorted(self.subjects, subject)
        preferred = table[:, col] if col < len(self.subjects) and self.subjects[col] == subject else \
            np.full(len(stims), -1)
        first = table[np.arange(len(stims)), np.argmax(table >= 0, axis=1)]
        return np.where(preferred >= 0, preferred, first)


@dataclass
class CandidateSet:
    ids: np.ndarray  # M triplet ids
    positive_index: int

    @property
    def positive_id(self):
        return int(self.ids[self.positive_index])


def sample_candidates(positive_id, pool: CandidatePool, task: RetrievalTask, rng):
    """
    Draw one positive and M-1 admissible negatives.

    Args:
        positive_id (int): triplet id of the positive
        pool (CandidatePool): eligible triplets
        task (RetrievalTask): M, sampling mode and buffer
        rng (numpy.random.Generator): randomness

    Returns:
        CandidateSet: M distinct stimuli with the positive at a random position
    """
    row, stim = pool.positive(positive_id)
    negatives = pool.admissible(stim, task)
    need = task.M - 1
    if negatives.size < need:
        raise ArgumentError(
            f"only {negatives.size} admissible {task.mode.value} negatives for triplet {positive_id}, "
            f"M={task.M} needs {need} (short by {need - negatives.size})")
    chosen = rng.choice(negatives, size=need, replace=False)
    neg_ids = pool.representative(chosen, int(row['subject']))
    position = int(rng.integers(task.M))
    ids = np.insert(neg_ids, position, int(positive_id))
    return CandidateSet(ids=ids, positive_index=position)


def draw_trials(pool: CandidatePool, task: RetrievalTask, seed):
    """
    Candidate sets for ``task.trials`` trials; trial t uses its own rng stream.

    Returns:
        list: CandidateSet per trial
    """
    master = np.random.default_rng([int(seed), 5])
    positives = master.choice(pool.ids, size=task.trials, replace=True)
    return [sample_candidates(pid, pool, task, np.random.default_rng([int(seed), 6, t]))
            for t, pid in enumerate(positives)]


def rank_candidates(query, candidates, temperature):
    """
    Rank candidates by similarity to the query.

    Args:
        query (numpy.ndarray): D unit vector
        candidates (numpy.ndarray): M x D unit vectors
        temperature (float): softmax temperature

    Returns:
        tuple: (candidate indices best first, ties by lower index; softmax probabilities)
    """
    sims = np.asarray(candidates, dtype=np.float64) @ np.asarray(query, dtype=np.float64)
    order = np.argsort(-sims, kind='stable')
    logits = sims / temperature
    logits -= logits.max()
    probs = np.exp(logits)
    return order, probs / probs.sum()


def trial_ranks(trials, query_emb, target_emb):
    """
    1-based rank of the positive in every trial.

    Args:
        trials (list): CandidateSet per trial
        query_emb (numpy.ndarray): embeddings indexed by triplet id (query modality)
        target_emb (numpy.ndarray): embeddings indexed by triplet id (target modality)
    """
    ids = np.stack([t.ids for t in trials])
    pos_index = np.array([t.positive_index for t in trials])
    queries = query_emb[ids[np.arange(len(trials)), pos_index]]
    sims = np.einsum('td,tmd->tm', queries, target_emb[ids])
    order = np.argsort(-sims, axis=1, kind='stable')
    return np.argmax(order == pos_index[:, None], axis=1) + 1


def topk_accuracy(ranks, k):
    """
    Percentage of trials with rank <= k and the half-width of its 95% CI.

    Returns:
        tuple: (mean %, 1.96 sqrt(p(1-p)/n) in %)
    """
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ArgumentError("top-K accuracy needs at least one trial")
    p = float(np.mean(ranks <= k))
    return 100.0 * p, 100.0 * CI_Z * np.sqrt(p * (1.0 - p) / ranks.size)


@dataclass
class RetrievalResult:
    task: RetrievalTask
    accuracy: Dict[int, tuple]
    trials: int
    rank_histogram: np.ndarray
    ranks: np.ndarray = field(repr=False, default=None)

    def top(self, k):
        return self.accuracy[k][0]

    def rows(self, **extra):
        return [{**extra, 'direction': self.task.direction.value, 'mode': self.task.mode.value,
                 'M': self.task.M, 'K': k, 'mean': mean, 'ci': ci, 'trials': self.trials}
                for k, (mean, ci) in sorted(self.accuracy.items())]


def result_from_ranks(ranks, task):
    ks = sorted({k for k in task.ks if k <= task.M} | {task.M})
    accuracy = {k: topk_accuracy(ranks, k) for k in ks}
    histogram = np.bincount(ranks, minlength=task.M + 1)[1:]
    return RetrievalResult(task=task, accuracy=accuracy, trials=len(ranks), rank_histogram=histogram,
                           ranks=np.asarray(ranks))


def evaluate_retrieval(trials, embeddings, task):
    """
    Score a retrieval task on precomputed embeddings.

    Args:
        trials (list): CandidateSet per trial (shared across methods)
        embeddings (dict): modality ('f', 'V', 'A') -> array indexed by triplet id
        task (RetrievalTask): direction and K values

    Returns:
        RetrievalResult: per-K accuracy with CIs
    """
    direction = Direction(task.direction)
    ranks = trial_ranks(trials, embeddings[direction.query], embeddings[direction.target])
    result = result_from_ranks(ranks, task)
    logger.info(f"{direction.value} {task.mode.value} M={task.M}: top-1 {result.top(1):.1f}% "
                f"+/- {result.accuracy[1][1]:.1f} (chance {100.0 / task.M:.1f}%)")
    return result


def chance_rows(task):
    """Analytic chance K/M for the same K values."""
    ks = sorted({k for k in task.ks if k <= task.M} | {task.M})
    return [{'direction': task.direction.value, 'mode': task.mode.value, 'M': task.M, 'K': k,
             'mean': 100.0 * k / task.M, 'ci': 0.0, 'trials': 0} for k in ks]


def random_embeddings(num, dim, seed, stream=0):
    """Independent random unit vectors, one per triplet id; each ``stream`` draws its own set."""
    rng = np.random.default_rng([int(seed), 7, int(stream)])
    y = rng.standard_normal((num, dim))
    return y / np.linalg.norm(y, axis=1, keepdims=True)


def compute_embeddings(model, dataset, ids, patching, modalities=('f', 'V', 'A'), batch_size=64):
    """
    CLIP embeddings of ``ids`` per modality.

    Returns:
        dict: modality -> float64 array of shape (len(dataset), D_CLIP); rows
        outside ``ids`` are zero
    """
    ids = np.asarray(ids, dtype=np.int64)
    model.eval()
    dim = model.mappers['f'].proj.out_features
    out = {m: np.zeros((len(dataset), dim)) for m in modalities}
    with torch.no_grad():
        for start in range(0, len(ids), batch_size):
            chunk = ids[start:start + batch_size]
            for m in modalities:
                if m == 'f':
                    y = model.embed_fmri(patchify(dataset.windows(chunk), patching))
                else:
                    y = model.embed_stimulus(dataset.stimulus(chunk, m), m)
                out[m][chunk] = y.double().numpy()
    return out
