"""
Dataset container.

Layout: magic ``SIMD``, u16 version, u32 header length, header JSON, then the
data area. The header echoes the WorldConfig, the counts and an index of
sections (byte offset into the data area and length). Sections:

    series/<subject>/<movie>   one tensor record, V x T_total float32
    video/<movie>/<clip>       one tensor record, N_V x D_V float32
    audio/<movie>/<clip>       one tensor record, N_A x D_A float32
    metadata                   clip metadata table as parquet bytes (uint8 record)
    concepts                   optional ground-truth sidecar, movies x clips x K

Every section can be read on its own, so single clips load without touching
the rest of the file.
"""
import os
import json
import struct
import logging

import numpy as np
import pyarrow as pa
import pyarrow.parquet as pq

from surfalign.data_processing.datagen import TripletDataset, window_with_lag, ClipTriplet
from surfalign.errors import StateError
from surfalign.geometry.fields import SurfaceSeries
from surfalign.settings import WorldConfig
from surfalign.storage.tensor_io import decode_record, encode_record

logger = logging.getLogger(__name__)

MAGIC = b'SIMD'
VERSION = 1


def _frame_to_parquet(df):
    sink = pa.BufferOutputStream()
    pq.write_table(pa.Table.from_pandas(df, preserve_index=False), sink)
    return np.frombuffer(sink.getvalue().to_pybytes(), dtype=np.uint8)


def _parquet_to_frame(array):
    return pq.read_table(pa.BufferReader(array.tobytes())).to_pandas()


def write_dataset(path, dataset, include_concepts=True):
    """
    Save a TripletDataset.

    Args:
        path (str): output file
        dataset (TripletDataset): dataset to save
        include_concepts (bool): write the ground-truth sidecar

    Returns:
        str: path written
    """
    cfg = dataset.config
    sections = []
    for (subject, movie), series in sorted(dataset.series.items()):
        sections.append((f"series/{subject}/{movie}", series.values))
    for movie in range(cfg.num_movies):
        for clip in range(cfg.clips_per_movie):
            sections.append((f"video/{movie}/{clip}", dataset.video[movie, clip]))
            sections.append((f"audio/{movie}/{clip}", dataset.audio[movie, clip]))
    sections.append(("metadata", _frame_to_parquet(dataset.metadata)))
    if include_concepts and dataset.concepts is not None:
        sections.append(("concepts", dataset.concepts))

    index, blobs, offset = {}, [], 0
    for name, array in sections:
        blob = encode_record(name, array)
        index[name] = [offset, len(blob)]
        blobs.append(blob)
        offset += len(blob)

    header = json.dumps({
        'world': cfg.model_dump(mode='json'),
        'counts': {'subjects': cfg.num_subjects, 'movies': cfg.num_movies,
                   'clips_per_movie': cfg.clips_per_movie, 'triplets': len(dataset)},
        'has_concepts': 'concepts' in index,
        'sections': index,
    }, sort_keys=True).encode('utf-8')

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<HI', VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    logger.info(f"Saved dataset ({len(dataset)} triplets, {len(sections)} sections) to {path}")
    return path


class DatasetReader:
    """Random access to the sections of a dataset container."""

    def __init__(self, path):
        self.path = path
        if not os.path.exists(path):
            raise StateError(f"dataset {path} does not exist")
        with open(path, 'rb') as f:
            if f.read(4) != MAGIC:
                raise StateError(f"{path} is not a SIMD dataset container")
            version, header_len = struct.unpack('<HI', f.read(6))
            if version != VERSION:
                raise StateError(f"{path} has unsupported dataset version {version}")
            self.header = json.loads(f.read(header_len).decode('utf-8'))
            self._data_start = f.tell()
        self.config = WorldConfig.model_validate(self.header['world'])
        self._metadata = None

    @property
    def has_concepts(self):
        return bool(self.header.get('has_concepts'))

    def read_section(self, name):
        entry = self.header['sections'].get(name)
        if entry is None:
            raise StateError(f"{self.path} has no section {name!r}")
        offset, length = entry
        with open(self.path, 'rb') as f:
            f.seek(self._data_start + offset)
            blob = f.read(length)
        stored, array = decode_record(blob)
        if stored != name:
            raise StateError(f"section index of {self.path} points at {stored!r} instead of {name!r}")
        return array

    def read_metadata(self):
        if self._metadata is None:
            self._metadata = _parquet_to_frame(self.read_section('metadata'))
        return self._metadata

    def read_series(self, subject, movie):
        return SurfaceSeries(mesh_level=self.config.mesh_level, values=self.read_section(f"series/{subject}/{movie}"),
                             metadata={'subject': subject, 'movie': movie})

    def read_stimulus(self, movie, clip, modality):
        key = {'V': 'video', 'A': 'audio'}[modality]
        return self.read_section(f"{key}/{movie}/{clip}")

    def read_concepts(self):
        return self.read_section('concepts') if self.has_concepts else None

    def read_triplet(self, triplet_id):
        """Load one clip, reading only the sections it needs."""
        row = self.read_metadata().iloc[int(triplet_id)]
        subject, movie, clip, offset = (int(row[c]) for c in ('subject', 'movie', 'clip', 'offset'))
        series = self.read_series(subject, movie)
        return ClipTriplet(
            subject=subject, movie=movie, clip=clip, offset=offset,
            fmri_window=window_with_lag(series, offset, self.config.lag_seconds, self.config.frames_per_clip_fmri),
            video_seq=self.read_stimulus(movie, clip, 'V'),
            audio_seq=self.read_stimulus(movie, clip, 'A'),
        )


def read_dataset(path, load_concepts=True):
    """
    Load a whole dataset container.

    Args:
        path (str): container file
        load_concepts (bool): False gives a blind dataset without ground truth

    Returns:
        TripletDataset: the stored dataset
    """
    reader = DatasetReader(path)
    cfg = reader.config
    series = {(s, m): reader.read_series(s, m)
              for s in range(cfg.num_subjects) for m in range(cfg.num_movies)}
    video = np.stack([np.stack([reader.read_stimulus(m, c, 'V') for c in range(cfg.clips_per_movie)])
                      for m in range(cfg.num_movies)])
    audio = np.stack([np.stack([reader.read_stimulus(m, c, 'A') for c in range(cfg.clips_per_movie)])
                      for m in range(cfg.num_movies)])
    concepts = reader.read_concepts() if load_concepts else None
    dataset = TripletDataset(config=cfg, series=series, video=video, audio=audio,
                             concepts=concepts, metadata=reader.read_metadata())
    logger.info(f"Loaded dataset ({len(dataset)} triplets) from {path}")
    return dataset
