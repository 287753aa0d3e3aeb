"""
Tests for the binary containers, result tables and run manifest.
"""
import json
import os
from collections import OrderedDict

import numpy as np
import pandas as pd
import pytest

from surfalign.errors import ArgumentError, ChecksumError, ConfigHashMismatchError, StateError
from surfalign.geometry.fields import SurfaceField
from surfalign.models.vsmae import build_vsmae
from surfalign.storage.checkpoint import load_checkpoint, load_module_tensors, model_tensors, save_checkpoint
from surfalign.storage.container import DatasetReader, read_dataset, write_dataset
from surfalign.storage.manifest import RunManifest, sanitize_for_json, write_resolved_config
from surfalign.storage.results import HASH_PREFIX, load_table, save_summary, save_table
from surfalign.storage.surface_io import read_surface_field, write_surface_field
from surfalign.storage.tensor_io import decode_record, encode_record


# -------------------------------------------------------------------------------------------------
# Tensor records and checkpoints
# -------------------------------------------------------------------------------------------------

class TestTensorRecords:

    def test_decode_matches(self, rng):
        array = rng.standard_normal((3, 4)).astype(np.float32)
        name, decoded = decode_record(encode_record('w', array))
        assert name == 'w'
        assert decoded.dtype == np.float32
        assert np.array_equal(decoded, array)

    def test_scalar_and_integer(self):
        _, decoded = decode_record(encode_record('step', np.int64(7)))
        assert decoded.shape == () and decoded == 7

    def test_corrupted_payload(self, rng):
        blob = bytearray(encode_record('w', rng.standard_normal(8)))
        blob[-5] ^= 0xFF
        with pytest.raises(ChecksumError):
            decode_record(blob)

    def test_truncated(self, rng):
        blob = encode_record('w', rng.standard_normal(8))
        with pytest.raises(StateError):
            decode_record(blob[:-10])

    def test_unsupported_dtype(self):
        with pytest.raises(ArgumentError):
            encode_record('c', np.zeros(2, dtype=np.complex64))


class TestCheckpoint:

    @pytest.fixture
    def tensors(self, sit_config):
        return model_tensors(build_vsmae(sit_config, seed=3))

    def test_save_load_save_identical(self, tmp_path, tensors):
        first = save_checkpoint(str(tmp_path / 'a.simc'), tensors, 'abc123', step=40)
        loaded = load_checkpoint(first, expected_hash='abc123')
        assert loaded.step == 40 and loaded.config_hash == 'abc123'
        assert list(loaded.tensors) == list(tensors)
        second = save_checkpoint(str(tmp_path / 'b.simc'), loaded.tensors, loaded.config_hash, step=loaded.step)
        with open(first, 'rb') as f1, open(second, 'rb') as f2:
            assert f1.read() == f2.read()

    def test_hash_mismatch(self, tmp_path, tensors):
        path = save_checkpoint(str(tmp_path / 'a.simc'), tensors, 'abc123')
        with pytest.raises(ConfigHashMismatchError):
            load_checkpoint(path, expected_hash='other')
        assert load_checkpoint(path, expected_hash='other', force=True).config_hash == 'abc123'

    def test_missing_and_foreign_files(self, tmp_path):
        with pytest.raises(StateError):
            load_checkpoint(str(tmp_path / 'none.simc'))
        bad = tmp_path / 'bad.simc'
        bad.write_bytes(b'XXXX0000')
        with pytest.raises(StateError):
            load_checkpoint(str(bad))

    def test_subset_restores_module(self, sit_config, tmp_path):
        source = build_vsmae(sit_config, seed=3)
        tensors = OrderedDict(model_tensors(source.encoder, prefix='encoder'))
        tensors['decoder_note'] = np.zeros(1)
        path = save_checkpoint(str(tmp_path / 'enc.simc'), tensors, 'h')
        target = build_vsmae(sit_config, seed=9).encoder
        load_module_tensors(target, load_checkpoint(path).subset('encoder'))
        for name, value in model_tensors(target).items():
            assert np.array_equal(value, tensors[f"encoder.{name}"])

    def test_shape_mismatch(self, sit_config, tensors):
        bad = OrderedDict(tensors)
        key = next(iter(bad))
        bad[key] = np.zeros((1,) + bad[key].shape, dtype=bad[key].dtype)
        with pytest.raises(StateError):
            load_module_tensors(build_vsmae(sit_config), bad)


# -------------------------------------------------------------------------------------------------
# Dataset container and surface files
# -------------------------------------------------------------------------------------------------

class TestDatasetContainer:

    @pytest.fixture
    def stored(self, tiny_dataset, tmp_path):
        return write_dataset(str(tmp_path / 'world.simd'), tiny_dataset)

    def test_full_read(self, stored, tiny_dataset):
        loaded = read_dataset(stored)
        assert loaded.config == tiny_dataset.config
        assert len(loaded) == len(tiny_dataset)
        assert np.array_equal(loaded.video, tiny_dataset.video)
        assert np.array_equal(loaded.audio, tiny_dataset.audio)
        assert np.array_equal(loaded.series[(4, 1)].values, tiny_dataset.series[(4, 1)].values)
        pd.testing.assert_frame_equal(loaded.metadata, tiny_dataset.metadata)
        assert np.array_equal(loaded.windows([0, 50]), tiny_dataset.windows([0, 50]))

    def test_blind_read(self, stored):
        assert read_dataset(stored, load_concepts=False).concepts is None

    def test_single_triplet(self, stored, tiny_dataset):
        reader = DatasetReader(stored)
        triplet = reader.read_triplet(37)
        expected = tiny_dataset.triplet(37)
        assert (triplet.subject, triplet.movie, triplet.clip) == (expected.subject, expected.movie, expected.clip)
        assert np.array_equal(triplet.fmri_window, expected.fmri_window)
        assert np.array_equal(triplet.video_seq, expected.video_seq)

    def test_header_counts(self, stored, tiny_dataset):
        reader = DatasetReader(stored)
        assert reader.header['counts']['triplets'] == len(tiny_dataset)
        assert reader.has_concepts == (tiny_dataset.concepts is not None)
        with pytest.raises(StateError):
            reader.read_section('video/9/9')

    def test_not_a_container(self, tmp_path):
        path = tmp_path / 'x.simd'
        path.write_bytes(b'SIMC')
        with pytest.raises(StateError):
            DatasetReader(str(path))


class TestSurfaceFiles:

    def test_round_trip_with_metadata(self, tmp_path, rng):
        surface = SurfaceField(mesh_level=2, values=rng.random((162, 3)), metadata={'head': 1, 'r': np.float64(0.5)})
        loaded = read_surface_field(write_surface_field(str(tmp_path / 's.simf'), surface))
        assert loaded.mesh_level == 2
        assert np.array_equal(loaded.values, surface.values)
        assert loaded.metadata == {'head': 1, 'r': 0.5}


# -------------------------------------------------------------------------------------------------
# Result tables and manifest
# -------------------------------------------------------------------------------------------------

class TestResults:

    def test_table_carries_hash(self, tmp_path):
        df = pd.DataFrame({'K': [1, 5], 'mean': [12.5, 40.0]})
        path = save_table(df, str(tmp_path / 'out' / 'r.csv'), 'deadbeef')
        with open(path) as f:
            assert f.readline() == f"{HASH_PREFIX}deadbeef\n"
        loaded, config_hash = load_table(path)
        assert config_hash == 'deadbeef'
        pd.testing.assert_frame_equal(loaded, df)

    def test_plain_csv(self, tmp_path):
        path = tmp_path / 'plain.csv'
        pd.DataFrame({'a': [1]}).to_csv(path, index=False)
        df, config_hash = load_table(str(path))
        assert config_hash is None and df['a'].tolist() == [1]

    def test_summary_sanitised(self, tmp_path):
        path = save_summary({'best': np.int64(6), 'r': float('nan')}, str(tmp_path / 's.json'), 'h')
        with open(path) as f:
            assert json.load(f) == {'config_hash': 'h', 'best': 6, 'r': None}


class TestManifest:

    def test_sanitize(self):
        out = sanitize_for_json({'a': np.arange(2), 'b': (np.float32(1.5), np.inf), 3: pd.Series([1])})
        assert out == {'a': [0, 1], 'b': [1.5, None], '3': [1]}

    def test_artifacts_persist(self, tmp_path, run_config):
        manifest = RunManifest(str(tmp_path))
        manifest.record_command('synth', 'h1', seed=7)
        manifest.add_artifact('dataset', str(tmp_path / 'data' / 'world.simd'), 'h1', kind='dataset')
        reloaded = RunManifest(str(tmp_path))
        assert reloaded.get('dataset')['path'] == os.path.join('data', 'world.simd')
        assert reloaded.artifact_path('dataset') == os.path.join(str(tmp_path), 'data', 'world.simd')
        assert reloaded.artifact_path('missing') is None
        assert [c['command'] for c in reloaded.commands] == ['synth']

    def test_resolved_config(self, tmp_path, run_config):
        path = write_resolved_config(str(tmp_path), run_config, 'h2')
        with open(path) as f:
            data = json.load(f)
        assert data['config_hash'] == 'h2'
        assert data['config']['world']['seed'] == run_config.world.seed
