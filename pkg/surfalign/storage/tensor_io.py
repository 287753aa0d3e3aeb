"""
Little-endian tensor records shared by the checkpoint, dataset and surface formats.

Record layout:
    u16 name length, name (utf-8)
    u8  dtype code (0 float32, 1 float64, 2 int64, 3 uint8)
    u8  ndim, then ndim x u64 shape
    u64 payload length, payload (C order, little-endian)
    u32 CRC32 of the payload
"""
import io
import struct
import zlib
import logging

import numpy as np

from surfalign.errors import ArgumentError, ChecksumError, StateError

logger = logging.getLogger(__name__)

_DTYPES = {0: np.dtype('<f4'), 1: np.dtype('<f8'), 2: np.dtype('<i8'), 3: np.dtype('u1')}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2, np.dtype(np.uint8): 3}


def _as_numpy(array):
    if hasattr(array, 'detach'):
        array = array.detach().cpu().numpy()
    return np.asarray(array)


def encode_record(name, array):
    """
    Serialise one named array.

    Returns:
        bytes: the encoded record
    """
    array = _as_numpy(array)
    code = _CODES.get(array.dtype)
    if code is None:
        raise ArgumentError(f"tensor {name!r} has unsupported dtype {array.dtype}")
    payload = np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()
    name_bytes = name.encode('utf-8')
    parts = [
        struct.pack('<H', len(name_bytes)), name_bytes,
        struct.pack('<BB', code, array.ndim),
        struct.pack(f'<{array.ndim}Q', *array.shape),
        struct.pack('<Q', len(payload)), payload,
        struct.pack('<I', zlib.crc32(payload) & 0xFFFFFFFF),
    ]
    return b''.join(parts)


class RecordReader:
    """Sequential record reader over an open binary file."""

    def __init__(self, source):
        self.source = source

    def _read(self, n):
        data = self.source.read(n)
        if len(data) != n:
            raise StateError("unexpected end of file while reading a tensor record")
        return data

    def read(self):
        (name_len,) = struct.unpack('<H', self._read(2))
        name = self._read(name_len).decode('utf-8')
        code, ndim = struct.unpack('<BB', self._read(2))
        if code not in _DTYPES:
            raise StateError(f"tensor {name!r} has unknown dtype code {code}")
        shape = struct.unpack(f'<{ndim}Q', self._read(8 * ndim)) if ndim else ()
        (length,) = struct.unpack('<Q', self._read(8))
        payload = self._read(length)
        (crc,) = struct.unpack('<I', self._read(4))
        if zlib.crc32(payload) & 0xFFFFFFFF != crc:
            raise ChecksumError(f"CRC32 mismatch in tensor {name!r}")
        array = np.frombuffer(payload, dtype=_DTYPES[code]).reshape(shape)
        return name, array.astype(_DTYPES[code].newbyteorder('='), copy=True)


def decode_record(buffer):
    """Decode a single record held in memory; returns (name, array)."""
    return RecordReader(io.BytesIO(bytes(buffer))).read()
