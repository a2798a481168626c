"""
CTW1 weight checkpoints.

Layout (little-endian): b"CTWGT1", u16 version, u32 tensor count, then per tensor
u16 name length, utf-8 name, u8 rank, u32 dims[rank], f32 data.

A model's state is stored as `<prefix>/<param>` values plus `#m`, `#v` (Adam)
and `#u` (spectral) companions; scalars live under `meta/<key>` as 1-element tensors.
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np
import xxhash

from services.exceptions import (
    BadMagicError,
    LengthMismatchError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from services.neural.layers import Module

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CHECKPOINT_MAGIC = b"CTWGT1"
CHECKPOINT_VERSION = 1
META_PREFIX = 'meta/'

_HEAD = struct.Struct('<6sHI')
_F32 = np.dtype('<f4')


def encode_tensors(tensors: Dict[str, np.ndarray]) -> bytes:
    chunks = [_HEAD.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array, dtype=_F32)
        raw_name = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack('<B', array.ndim))
        chunks.append(struct.pack(f'<{array.ndim}I', *array.shape))
        chunks.append(array.tobytes(order='C'))
    return b''.join(chunks)


def decode_tensors(raw: bytes, path: PathLike = '<bytes>') -> Dict[str, np.ndarray]:
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: not a CTW1 checkpoint")
    if len(raw) < _HEAD.size:
        raise TruncatedFileError(f"{path}: checkpoint header truncated")
    _, version, count = _HEAD.unpack_from(raw, 0)
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version}")

    offset = _HEAD.size
    tensors: Dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(raw):
            raise TruncatedFileError(f"{path}: checkpoint ends inside tensor {len(tensors)}")
        chunk = raw[offset:offset + n]
        offset += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack('<H', take(2))
        name = take(name_len).decode('utf-8')
        (rank,) = struct.unpack('<B', take(1))
        dims = struct.unpack(f'<{rank}I', take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(size * _F32.itemsize), dtype=_F32).astype(np.float32)
        tensors[name] = data.reshape(dims)
    if offset != len(raw):
        raise LengthMismatchError(f"{path}: {len(raw) - offset} trailing bytes after {count} tensors")
    return tensors


def save_checkpoint(path: PathLike, tensors: Dict[str, np.ndarray]) -> Path:
    """Write tensors atomically (temp file, then rename)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    tmp.write_bytes(encode_tensors(tensors))
    tmp.replace(path)
    logger.debug(f"Saved checkpoint with {len(tensors)} tensors to {path}")
    return path


def load_checkpoint(path: PathLike) -> Dict[str, np.ndarray]:
    path = Path(path)
    return decode_tensors(path.read_bytes(), path)


def checkpoint_digest(path: PathLike) -> str:
    """xxhash64 hex digest of a checkpoint file"""
    return xxhash.xxh64(Path(path).read_bytes()).hexdigest()


# ============ MODEL STATE ============

def model_state(prefix: str, model: Module) -> Dict[str, np.ndarray]:
    state = {}
    for param in model.parameters():
        key = f"{prefix}/{param.name}"
        state[key] = param.value
        state[f"{key}#m"] = param.m
        state[f"{key}#v"] = param.v
        if param.spectral:
            state[f"{key}#u"] = param.u
    return state


def load_model_state(prefix: str, model: Module, tensors: Dict[str, np.ndarray], strict: bool = True) -> None:
    """
    Copy values (and, when present, Adam and spectral state) into a model.

    Raises:
        LengthMismatchError: If a tensor is missing (strict) or has the wrong shape
    """
    for param in model.parameters():
        key = f"{prefix}/{param.name}"
        if key not in tensors:
            if strict:
                raise LengthMismatchError(f"checkpoint has no tensor '{key}'")
            continue
        if tensors[key].shape != param.shape:
            raise LengthMismatchError(f"'{key}' has shape {tensors[key].shape}, model expects {param.shape}")
        param.value = tensors[key].astype(np.float32).copy()
        param.m = tensors.get(f"{key}#m", np.zeros_like(param.value)).astype(np.float32).copy()
        param.v = tensors.get(f"{key}#v", np.zeros_like(param.value)).astype(np.float32).copy()
        param.grad = np.zeros_like(param.value)
        if param.spectral and f"{key}#u" in tensors:
            param.u = tensors[f"{key}#u"].astype(np.float32).copy()


def meta_tensors(meta: Dict[str, float]) -> Dict[str, np.ndarray]:
    return {f"{META_PREFIX}{key}": np.array([value], dtype=np.float32) for key, value in meta.items()}


def read_meta(tensors: Dict[str, np.ndarray]) -> Dict[str, float]:
    return {
        name[len(META_PREFIX):]: float(array.reshape(-1)[0])
        for name, array in tensors.items() if name.startswith(META_PREFIX)
    }
