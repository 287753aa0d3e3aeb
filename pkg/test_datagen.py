"""
Tests for the synthetic world generator and the experiment splits.
"""
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import tiny_world_config
from surfalign.data_processing.datagen import (
    make_world,
    metadata_table,
    spherical_harmonic_basis,
    window_with_lag,
)
from surfalign.data_processing.sanitizers import check_finite, l2_normalize, zscore_window
from surfalign.data_processing.splits import (
    largest_remainder,
    partition_subjects,
    split_experiment,
    validation_ids,
)
from surfalign.errors import ArgumentError, BoundsError
from surfalign.geometry.fields import SurfaceSeries
from surfalign.geometry.icosphere import generate_icosphere
from surfalign.settings import Experiment


def _lightweight(config):
    return SimpleNamespace(config=config, metadata=metadata_table(config))


# -------------------------------------------------------------------------------------------------
# World generation
# -------------------------------------------------------------------------------------------------

class TestMakeWorld:

    def test_sizes(self, tiny_dataset, world_config):
        assert len(tiny_dataset) == 5 * 2 * 12 == world_config.num_triplets
        assert tiny_dataset.video.shape == (2, 12, 4, 8)
        assert tiny_dataset.audio.shape == (2, 12, 5, 6)
        assert len(tiny_dataset.series) == 10
        series = tiny_dataset.series[(0, 0)]
        assert series.values.shape == (642, world_config.series_seconds)

    def test_triplet_ids_subject_major(self, tiny_dataset):
        meta = tiny_dataset.metadata
        assert meta['triplet_id'].tolist() == list(range(len(meta)))
        assert tiny_dataset.triplet_id(1, 1, 3) == 24 + 12 + 3
        row = tiny_dataset.row(39)
        assert (row['subject'], row['movie'], row['clip'], row['offset']) == (1, 1, 3, 9)

    def test_triplet_view(self, tiny_dataset, world_config):
        triplet = tiny_dataset[5]
        assert triplet.stimulus == (0, 5)
        assert triplet.fmri_window.shape == (642, world_config.frames_per_clip_fmri)
        assert np.array_equal(triplet.video_seq, tiny_dataset.video[0, 5])
        with pytest.raises(BoundsError):
            tiny_dataset.row(len(tiny_dataset))

    def test_windows_are_zscored(self, tiny_dataset):
        windows = tiny_dataset.windows([0, 7, 50])
        assert windows.dtype == np.float32
        assert np.allclose(windows.mean(axis=(1, 2)), 0.0, atol=1e-5)
        assert np.allclose(windows.std(axis=(1, 2)), 1.0, atol=1e-4)

    def test_stimulus_rows_follow_metadata(self, tiny_dataset):
        seqs = tiny_dataset.stimulus([3, 15], 'A')
        assert np.array_equal(seqs[0], tiny_dataset.audio[0, 3])
        assert np.array_equal(seqs[1], tiny_dataset.audio[1, 3])
        with pytest.raises(ArgumentError):
            tiny_dataset.stimulus([0], 'X')

    def test_reproducible(self, tiny_dataset, world_config):
        again = make_world(world_config, threads=1)
        assert np.array_equal(again.video, tiny_dataset.video)
        assert np.array_equal(again.series[(4, 1)].values, tiny_dataset.series[(4, 1)].values)

    def test_noise_free_subjects_agree(self):
        config = tiny_world_config(num_subjects=2, subject_gain_std=0.0, field_noise_std=0.0,
                                   white_noise_std=0.0)
        world = make_world(config)
        a = world.windows([world.triplet_id(0, 1, 4)], zscore=False)
        b = world.windows([world.triplet_id(1, 1, 4)], zscore=False)
        assert np.array_equal(a, b)

    def test_signal_lags_stimulus(self):
        config = tiny_world_config(num_subjects=1, num_movies=1, field_noise_std=0.0, subject_gain_std=0.0)
        world = make_world(config)
        values = world.series[(0, 0)].values
        assert np.all(values[:, :config.lag_seconds] == 0.0)
        assert np.any(values[:, config.lag_seconds] != 0.0)


class TestWindowWithLag:

    def _series(self, frames=30):
        return SurfaceSeries(mesh_level=0, values=np.tile(np.arange(frames, dtype=np.float64), (12, 1)))

    def test_frames(self):
        window = window_with_lag(self._series(), stimulus_start=10, lag=6, frames=3)
        assert window[0].tolist() == [16.0, 17.0, 18.0]

    def test_zero_lag(self):
        assert window_with_lag(self._series(), 0, 0, 2)[0].tolist() == [0.0, 1.0]

    def test_past_the_end(self):
        with pytest.raises(BoundsError):
            window_with_lag(self._series(), stimulus_start=25, lag=6, frames=3)

    def test_negative_start(self):
        with pytest.raises(BoundsError):
            window_with_lag(self._series(), stimulus_start=-1, lag=0, frames=3)


class TestHarmonics:

    def test_orthonormal_on_fine_mesh(self):
        vertices = generate_icosphere(5).vertices
        basis = spherical_harmonic_basis(vertices, 2)
        assert basis.shape == (len(vertices), 9)
        gram = basis.T @ basis * (4 * np.pi / len(vertices))
        assert np.allclose(gram, np.eye(9), atol=1e-8)

    def test_constant_term(self):
        basis = spherical_harmonic_basis(generate_icosphere(1).vertices, 0)
        assert np.allclose(basis, 1.0 / np.sqrt(4 * np.pi))


class TestSanitizers:

    def test_constant_window_only_centred(self):
        out = zscore_window(np.full((5, 3), 2.0))
        assert np.all(out == 0.0)

    def test_batched_windows_scaled_independently(self, rng):
        out = zscore_window(np.stack([rng.standard_normal((6, 4)), 10 + 3 * rng.standard_normal((6, 4))]))
        assert out.dtype == np.float32
        assert np.allclose(out.mean(axis=(1, 2)), 0.0, atol=1e-6)
        assert np.allclose(out.std(axis=(1, 2)), 1.0, atol=1e-5)

    def test_non_finite_and_zero_rows(self):
        with pytest.raises(ArgumentError):
            check_finite(np.array([1.0, np.nan]), 'video')
        with pytest.raises(ArgumentError):
            l2_normalize(np.zeros((2, 3)))
        assert np.allclose(np.linalg.norm(l2_normalize(np.array([[3.0, 4.0]])), axis=1), 1.0)


# -------------------------------------------------------------------------------------------------
# Splits
# -------------------------------------------------------------------------------------------------

class TestSplits:

    def test_largest_remainder(self):
        assert largest_remainder(8, (124, 25, 25)).tolist() == [6, 1, 1]
        assert largest_remainder(174, (124, 25, 25)).tolist() == [124, 25, 25]
        assert largest_remainder(10, (1, 1, 1)).tolist() == [4, 3, 3]

    def test_too_few_subjects(self):
        with pytest.raises(ArgumentError):
            partition_subjects(3)

    def test_e1_holds_out_subjects(self):
        dataset = _lightweight(tiny_world_config(num_subjects=8))
        split = split_experiment(dataset, Experiment.E1)
        assert split.sizes() == {'train': 6 * 24, 'val': 24, 'test': 24}
        meta = dataset.metadata
        groups = [set(meta.iloc[split.ids(p)]['subject']) for p in ('train', 'val', 'test')]
        assert groups == [set(range(6)), {6}, {7}]

    def test_e1_seeded_shuffle_keeps_sizes(self):
        dataset = _lightweight(tiny_world_config(num_subjects=8))
        split = split_experiment(dataset, Experiment.E1, seed=3)
        assert split.sizes() == {'train': 144, 'val': 24, 'test': 24}
        assert not set(split.train) & set(split.test)

    def test_e2_movie_halves(self):
        dataset = _lightweight(tiny_world_config())
        split = split_experiment(dataset, Experiment.E2)
        meta = dataset.metadata
        assert meta.iloc[split.train]['clip'].max() == 5
        assert meta.iloc[split.test]['clip'].min() == 6
        assert len(split.val) == 0
        assert len(split.train) + len(split.test) == len(meta)

    def test_e3_disjoint_in_subjects_and_clips(self):
        dataset = _lightweight(tiny_world_config(num_subjects=8))
        split = split_experiment(dataset, Experiment.E3)
        meta = dataset.metadata
        train, test = meta.iloc[split.train], meta.iloc[split.test]
        assert not set(train['subject']) & set(test['subject'])
        assert not set(zip(train['movie'], train['clip'])) & set(zip(test['movie'], test['clip']))
        assert len(split.test) == 1 * 2 * 6

    def test_halves_need_two_clips(self):
        dataset = _lightweight(tiny_world_config(clips_per_movie=1))
        with pytest.raises(ArgumentError):
            split_experiment(dataset, Experiment.E2)

    def test_validation_carved_from_training_clips(self):
        dataset = _lightweight(tiny_world_config())
        split = split_experiment(dataset, Experiment.E2)
        train, val = validation_ids(dataset, split)
        meta = dataset.metadata
        assert set(meta.iloc[val]['clip']) == {4, 5}
        assert len(train) + len(val) == len(split.train)

    def test_existing_validation_kept(self):
        dataset = _lightweight(tiny_world_config())
        split = split_experiment(dataset, Experiment.E1)
        train, val = validation_ids(dataset, split)
        assert np.array_equal(val, split.val)
