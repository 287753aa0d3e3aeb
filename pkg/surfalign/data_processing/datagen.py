"""
Synthetic movie-watching world.

Each movie is a sequence of clips with one latent concept vector per clip.
Concepts drive the video and audio embedding sequences through fixed random
linear maps, and drive a smooth surface signal through fixed spherical
harmonic basis fields, delayed by the hemodynamic lag. Every random draw uses
its own stream seeded from (seed, stream, ids) so any part of the world can be
regenerated independently and in any order.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import gammaln, lpmv

from surfalign.data_processing.sanitizers import zscore_window
from surfalign.errors import ArgumentError, BoundsError
from surfalign.geometry.fields import SurfaceSeries
from surfalign.geometry.icosphere import generate_icosphere
from surfalign.settings import WorldConfig

logger = logging.getLogger(__name__)

# rng stream ids
_BASIS, _MAPS, _MOVIE, _CLIP, _VIDEO_NOISE, _AUDIO_NOISE, _GAIN, _FIELD_NOISE, _WHITE = range(9)

METADATA_COLUMNS = ['triplet_id', 'subject', 'movie', 'clip', 'offset']


def _rng(seed, stream, *ids):
    return np.random.default_rng([int(seed), stream, *[int(i) for i in ids]])


def spherical_harmonic_basis(vertices, order):
    """
    Real spherical harmonics up to ``order`` evaluated at unit vectors.

    Args:
        vertices (numpy.ndarray): V x 3 unit vectors
        order (int): maximum degree l

    Returns:
        numpy.ndarray: V x (order+1)^2, columns ordered by (l, m), m = -l..l
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    cos_theta = np.clip(vertices[:, 2], -1.0, 1.0)
    phi = np.arctan2(vertices[:, 1], vertices[:, 0])
    columns = []
    for l in range(order + 1):
        for m in range(-l, l + 1):
            am = abs(m)
            norm = np.sqrt((2 * l + 1) / (4 * np.pi) * np.exp(gammaln(l - am + 1) - gammaln(l + am + 1)))
            legendre = lpmv(am, l, cos_theta)
            if m == 0:
                columns.append(norm * legendre)
            elif m > 0:
                columns.append(np.sqrt(2.0) * norm * legendre * np.cos(am * phi))
            else:
                columns.append(np.sqrt(2.0) * norm * legendre * np.sin(am * phi))
    return np.stack(columns, axis=1)


@lru_cache(maxsize=8)
def _unit_rms_basis(level, order):
    basis = spherical_harmonic_basis(generate_icosphere(level).vertices, order)
    basis /= np.sqrt(np.mean(basis ** 2, axis=0, keepdims=True))
    basis.setflags(write=False)
    return basis


@dataclass
class ClipTriplet:
    subject: int
    movie: int
    clip: int
    offset: int  # stimulus start in seconds
    fmri_window: np.ndarray  # V x T
    video_seq: np.ndarray  # N_V x D_V
    audio_seq: np.ndarray  # N_A x D_A
    concept: Optional[np.ndarray] = None

    @property
    def stimulus(self) -> Tuple[int, int]:
        return (self.movie, self.clip)


@dataclass
class TripletDataset:
    """
    All clips of a world, stored once per (subject, movie) series and once per stimulus.

    Triplet ids enumerate subject-major, then movie, then clip.
    """
    config: WorldConfig
    series: Dict[Tuple[int, int], SurfaceSeries]
    video: np.ndarray  # movies x clips x N_V x D_V
    audio: np.ndarray  # movies x clips x N_A x D_A
    concepts: Optional[np.ndarray] = None  # movies x clips x K
    metadata: pd.DataFrame = field(default=None)

    def __post_init__(self):
        if self.metadata is None:
            self.metadata = metadata_table(self.config)

    def __len__(self):
        return len(self.metadata)

    def __getitem__(self, triplet_id):
        return self.triplet(triplet_id)

    @property
    def mesh_level(self):
        return self.config.mesh_level

    def triplet_id(self, subject, movie, clip):
        cfg = self.config
        return (subject * cfg.num_movies + movie) * cfg.clips_per_movie + clip

    def row(self, triplet_id):
        if not 0 <= triplet_id < len(self):
            raise BoundsError(f"triplet id {triplet_id} outside 0..{len(self) - 1}")
        return self.metadata.iloc[int(triplet_id)]

    def window(self, triplet_id):
        row = self.row(triplet_id)
        return window_with_lag(self.series[(int(row['subject']), int(row['movie']))], int(row['offset']),
                               self.config.lag_seconds, self.config.frames_per_clip_fmri)

    def windows(self, ids, zscore=True):
        """
        Stack the fMRI windows of several triplets.

        Returns:
            numpy.ndarray: B x V x T float32 (z-scored per window by default)
        """
        stack = np.stack([self.window(i) for i in ids], axis=0)
        return zscore_window(stack) if zscore else stack.astype(np.float32)

    def stimulus(self, ids, modality):
        """B x tokens x dim stimulus sequences for ``modality`` in {'V', 'A'}."""
        table = {'V': self.video, 'A': self.audio}.get(modality)
        if table is None:
            raise ArgumentError(f"unknown stimulus modality {modality!r}")
        rows = self.metadata.iloc[np.asarray(ids, dtype=np.int64)]
        return table[rows['movie'].to_numpy(), rows['clip'].to_numpy()]

    def triplet(self, triplet_id):
        row = self.row(triplet_id)
        movie, clip = int(row['movie']), int(row['clip'])
        return ClipTriplet(
            subject=int(row['subject']), movie=movie, clip=clip, offset=int(row['offset']),
            fmri_window=self.window(triplet_id),
            video_seq=self.video[movie, clip], audio_seq=self.audio[movie, clip],
            concept=None if self.concepts is None else self.concepts[movie, clip],
        )


def metadata_table(config):
    subjects, movies, clips = np.meshgrid(
        np.arange(config.num_subjects), np.arange(config.num_movies), np.arange(config.clips_per_movie),
        indexing='ij')
    df = pd.DataFrame({
        'subject': subjects.ravel(),
        'movie': movies.ravel(),
        'clip': clips.ravel(),
    })
    df.insert(0, 'triplet_id', np.arange(len(df)))
    df['offset'] = df['clip'] * config.clip_seconds
    return df.astype(np.int64)


def window_with_lag(series, stimulus_start, lag, frames):
    """
    Frames recorded ``lag`` seconds after a stimulus starts.

    Args:
        series (SurfaceSeries): 1 frame per second
        stimulus_start (int): stimulus onset in seconds
        lag (int): hemodynamic lag in seconds
        frames (int): window length T

    Returns:
        numpy.ndarray: V x T frames stimulus_start+lag .. stimulus_start+lag+T-1
    """
    start = int(stimulus_start) + int(lag)
    if stimulus_start < 0 or start + frames > series.num_frames:
        raise BoundsError(
            f"window {start}..{start + frames - 1} outside a series of {series.num_frames} frames")
    return series.frames(start, frames)


def movie_concepts(config, movie):
    """clips x K concept trajectory of one movie."""
    K = config.concept_dim
    movie_mean = _rng(config.seed, _MOVIE, movie).standard_normal(K)
    clips = np.stack([_rng(config.seed, _CLIP, movie, c).standard_normal(K)
                      for c in range(config.clips_per_movie)])
    share = config.movie_concept_share
    return np.sqrt(share) * movie_mean[None, :] + np.sqrt(1.0 - share) * clips


def stimulus_maps(config):
    """Fixed linear maps from concepts to flattened video and audio sequences."""
    rng = _rng(config.seed, _MAPS)
    K = config.concept_dim
    video_map = rng.standard_normal((config.video_tokens * config.video_dim, K)) / np.sqrt(K)
    audio_map = rng.standard_normal((config.audio_tokens * config.audio_dim, K)) / np.sqrt(K)
    return video_map, audio_map


def concept_fields(config):
    """
    K smooth basis fields, each a random combination of harmonics up to harmonic_order.

    Returns:
        numpy.ndarray: K x V, each field scaled to unit RMS
    """
    basis = _unit_rms_basis(config.mesh_level, config.harmonic_order)
    rng = _rng(config.seed, _BASIS)
    degrees = np.concatenate([[l] * (2 * l + 1) for l in range(config.harmonic_order + 1)])
    coeffs = rng.standard_normal((config.concept_dim, basis.shape[1])) / (1.0 + degrees)[None, :]
    fields = coeffs @ basis.T
    return fields / np.sqrt(np.mean(fields ** 2, axis=1, keepdims=True))


def concept_timeline(config, concepts):
    """
    Per-second concept values of one movie.

    Returns:
        numpy.ndarray: series_seconds x K, zero after the last clip
    """
    timeline = np.zeros((config.series_seconds, config.concept_dim))
    movie_seconds = config.clips_per_movie * config.clip_seconds
    timeline[:movie_seconds] = np.repeat(concepts, config.clip_seconds, axis=0)
    return timeline


def subject_gain(config, subject):
    return 1.0 + config.subject_gain_std * _rng(config.seed, _GAIN, subject).standard_normal()


def _make_series(config, subject, movie, fields, concepts):
    T = config.series_seconds
    timeline = concept_timeline(config, concepts)
    # signal at t reflects the stimulus at t - lag
    delayed = np.zeros_like(timeline)
    lag = config.lag_seconds
    delayed[lag:] = timeline[:T - lag] if lag else timeline
    values = subject_gain(config, subject) * (fields.T @ delayed.T)  # V x T

    if config.field_noise_std > 0:
        basis = _unit_rms_basis(config.mesh_level, config.harmonic_order)
        rng = _rng(config.seed, _FIELD_NOISE, subject, movie)
        coeffs = rng.standard_normal((basis.shape[1], T)) * (config.field_noise_std / np.sqrt(basis.shape[1]))
        values = values + basis @ coeffs
    if config.white_noise_std > 0:
        rng = _rng(config.seed, _WHITE, subject, movie)
        values = values + config.white_noise_std * rng.standard_normal(values.shape)
    return SurfaceSeries(mesh_level=config.mesh_level, values=values.astype(np.float32),
                         metadata={'subject': subject, 'movie': movie})


def _make_stimuli(config, concepts_by_movie):
    video_map, audio_map = stimulus_maps(config)
    M, C = config.num_movies, config.clips_per_movie
    video = np.empty((M, C, config.video_tokens, config.video_dim), dtype=np.float32)
    audio = np.empty((M, C, config.audio_tokens, config.audio_dim), dtype=np.float32)
    for m in range(M):
        for c in range(C):
            concept = concepts_by_movie[m, c]
            v = video_map @ concept
            a = audio_map @ concept
            if config.video_noise_std > 0:
                v = v + config.video_noise_std * _rng(config.seed, _VIDEO_NOISE, m, c).standard_normal(v.shape)
            if config.audio_noise_std > 0:
                a = a + config.audio_noise_std * _rng(config.seed, _AUDIO_NOISE, m, c).standard_normal(a.shape)
            video[m, c] = v.reshape(config.video_tokens, config.video_dim)
            audio[m, c] = a.reshape(config.audio_tokens, config.audio_dim)
    return video, audio


def make_world(config: WorldConfig, threads: Optional[int] = None):
    """
    Generate the synthetic dataset.

    Args:
        config (WorldConfig): world parameters
        threads (int, optional): worker threads for the per-(subject, movie) series

    Returns:
        TripletDataset: num_subjects x num_movies x clips_per_movie triplets
    """
    logger.info(
        f"Generating world: {config.num_subjects} subjects, {config.num_movies} movies, "
        f"{config.clips_per_movie} clips/movie, mesh level {config.mesh_level}, seed {config.seed}")
    concepts = np.stack([movie_concepts(config, m) for m in range(config.num_movies)])
    fields = concept_fields(config)
    video, audio = _make_stimuli(config, concepts)

    keys = [(s, m) for s in range(config.num_subjects) for m in range(config.num_movies)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        made = list(pool.map(lambda key: _make_series(config, key[0], key[1], fields, concepts[key[1]]), keys))
    series = dict(zip(keys, made))

    dataset = TripletDataset(config=config, series=series, video=video, audio=audio,
                             concepts=concepts.astype(np.float32))
    logger.info(f"Generated {len(dataset)} triplets ({config.series_seconds} s per series)")
    return dataset
