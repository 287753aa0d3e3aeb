"""
SurfaceField files.

Layout: magic ``SIMF``, u16 version, u16 mesh level, u32 metadata length,
metadata JSON (utf-8), then one tensor record ``values`` (V x C float32).
"""
import os
import json
import struct
import logging

import numpy as np
import pandas as pd

from surfalign.errors import StateError
from surfalign.geometry.fields import SurfaceField
from surfalign.storage.manifest import sanitize_for_json
from surfalign.storage.tensor_io import RecordReader, encode_record

logger = logging.getLogger(__name__)

MAGIC = b'SIMF'
VERSION = 1


def write_surface_field(path, surface):
    """
    Save a SurfaceField.

    Returns:
        str: path written
    """
    meta = json.dumps(sanitize_for_json(surface.metadata), sort_keys=True).encode('utf-8')
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<HHI', VERSION, surface.mesh_level, len(meta)))
        f.write(meta)
        f.write(encode_record('values', surface.values.astype(np.float32)))
    logger.info(f"Saved level {surface.mesh_level} surface field to {path}")
    return path


def read_surface_field(path):
    """
    Load a SurfaceField written by write_surface_field.

    Returns:
        SurfaceField: field with its metadata
    """
    with open(path, 'rb') as f:
        if f.read(4) != MAGIC:
            raise StateError(f"{path} is not a SIMF surface file")
        version, level, meta_len = struct.unpack('<HHI', f.read(8))
        if version != VERSION:
            raise StateError(f"{path} has unsupported surface file version {version}")
        metadata = json.loads(f.read(meta_len).decode('utf-8'))
        _, values = RecordReader(f).read()
    logger.info(f"Loaded level {level} surface field from {path}")
    return SurfaceField(mesh_level=level, values=values, metadata=metadata)


def write_vertex_csv(path, columns):
    """
    Per-vertex dump for external rendering.

    Args:
        path (str): output CSV
        columns (dict): column name -> length-V array

    Returns:
        str: path written
    """
    df = pd.DataFrame({name: np.asarray(values).ravel() for name, values in columns.items()})
    df.insert(0, 'vertex', np.arange(len(df)))
    df.to_csv(path, index=False, float_format='%.9g')
    logger.info(f"Saved per-vertex table ({len(df)} rows) to {path}")
    return path
