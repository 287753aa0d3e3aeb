"""
Model checkpoints.

File layout: magic ``SIMC``, u16 version, 64-byte ASCII config hash, u64 step
index, u32 tensor count, then one tensor record per named tensor in
insertion order.
"""
import os
import struct
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import torch

from surfalign.errors import ConfigHashMismatchError, StateError
from surfalign.storage.tensor_io import RecordReader, encode_record

logger = logging.getLogger(__name__)

MAGIC = b'SIMC'
VERSION = 1
_HASH_BYTES = 64


@dataclass
class Checkpoint:
    tensors: 'OrderedDict[str, np.ndarray]' = field(default_factory=OrderedDict)
    config_hash: str = ''
    step: int = 0
    version: int = VERSION

    def subset(self, prefix):
        """Tensors under ``prefix.`` with the prefix stripped."""
        cut = len(prefix) + 1
        return OrderedDict((k[cut:], v) for k, v in self.tensors.items() if k.startswith(prefix + '.'))


def save_checkpoint(path, tensors, config_hash, step=0):
    """
    Write named tensors to a checkpoint file.

    Args:
        path (str): output file
        tensors (dict): name -> numpy array or torch tensor (order preserved)
        config_hash (str): hex digest identifying the producing configuration
        step (int): training step the tensors belong to

    Returns:
        str: path written
    """
    hash_bytes = config_hash.encode('ascii')[:_HASH_BYTES].ljust(_HASH_BYTES, b'\0')
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<H', VERSION))
        f.write(hash_bytes)
        f.write(struct.pack('<QI', int(step), len(tensors)))
        for name, array in tensors.items():
            f.write(encode_record(name, array))
    logger.info(f"Saved checkpoint ({len(tensors)} tensors, step {step}) to {path}")
    return path


def load_checkpoint(path, expected_hash=None, force=False):
    """
    Read a checkpoint.

    Args:
        path (str): checkpoint file
        expected_hash (str, optional): config hash the caller needs
        force (bool): downgrade a hash mismatch to a warning

    Returns:
        Checkpoint: tensors in file order
    """
    if not os.path.exists(path):
        raise StateError(f"checkpoint {path} does not exist")
    with open(path, 'rb') as f:
        if f.read(4) != MAGIC:
            raise StateError(f"{path} is not a SIMC checkpoint")
        (version,) = struct.unpack('<H', f.read(2))
        if version != VERSION:
            raise StateError(f"{path} has unsupported checkpoint version {version}")
        stored_hash = f.read(_HASH_BYTES).rstrip(b'\0').decode('ascii')
        step, count = struct.unpack('<QI', f.read(12))
        reader = RecordReader(f)
        tensors = OrderedDict(reader.read() for _ in range(count))
    if expected_hash is not None and stored_hash != expected_hash:
        message = f"checkpoint {path} was written for config {stored_hash[:12]}, current config is {expected_hash[:12]}"
        if not force:
            raise ConfigHashMismatchError(message)
        logger.warning(f"{message}; loading anyway (--force)")
    logger.info(f"Loaded checkpoint ({count} tensors, step {step}) from {path}")
    return Checkpoint(tensors=tensors, config_hash=stored_hash, step=step, version=version)


def model_tensors(module, prefix=None):
    """Persistent state of a module as numpy arrays, optionally prefixed."""
    out = OrderedDict()
    for name, tensor in module.state_dict().items():
        key = f"{prefix}.{name}" if prefix else name
        out[key] = tensor.detach().cpu().numpy()
    return out


def load_module_tensors(module, tensors):
    """
    Copy arrays into a module's state, keeping the module's dtype.

    Raises:
        StateError: when names or shapes do not match
    """
    state = module.state_dict()
    missing = [k for k in state if k not in tensors]
    if missing:
        raise StateError(f"checkpoint is missing tensors: {missing[:5]}")
    converted = OrderedDict()
    for name, current in state.items():
        array = tensors[name]
        if tuple(array.shape) != tuple(current.shape):
            raise StateError(f"tensor {name} has shape {array.shape}, expected {tuple(current.shape)}")
        converted[name] = torch.as_tensor(np.ascontiguousarray(array), dtype=current.dtype)
    module.load_state_dict(converted)
    return module
