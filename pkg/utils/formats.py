"""
Binary codecs for pipeline artifacts (little-endian, uncompressed).

CTV1 volume:    b"CTVOL1", u16 version, u32 nz, ny, nx, f32 sz, sy, sx, f32 voxels (z-major)
CTS1 sinogram:  b"CTSIN1", u16 version, u32 n_slices, n_angles, n_detectors, f32 spacing, f32 data
"""

import logging
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from services.exceptions import (
    BadMagicError,
    LengthMismatchError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from utils.volume import Sinogram, Volume

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

VOLUME_MAGIC = b"CTVOL1"
SINOGRAM_MAGIC = b"CTSIN1"
FORMAT_VERSION = 1

_VOLUME_HEADER = struct.Struct('<6sH3I3f')
_SINOGRAM_HEADER = struct.Struct('<6sH3If')
_F32 = np.dtype('<f4')


def _parse_header(raw: bytes, header: struct.Struct, magic: bytes, path: PathLike) -> Tuple:
    if len(raw) < len(magic) or raw[:len(magic)] != magic:
        raise BadMagicError(f"{path}: expected magic {magic!r}, found {raw[:len(magic)]!r}")
    if len(raw) < header.size:
        raise TruncatedFileError(f"{path}: header needs {header.size} bytes, file has {len(raw)}")
    fields = header.unpack_from(raw, 0)
    if fields[1] != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {fields[1]}")
    return fields


def _parse_payload(raw: bytes, offset: int, expected: int, path: PathLike) -> np.ndarray:
    payload = raw[offset:]
    if len(payload) % _F32.itemsize:
        raise TruncatedFileError(f"{path}: payload of {len(payload)} bytes is not a whole number of f32 values")
    count = len(payload) // _F32.itemsize
    if count != expected:
        raise LengthMismatchError(f"{path}: header declares {expected} values, payload holds {count}")
    return np.frombuffer(payload, dtype=_F32).astype(np.float32)


def encode_volume(volume: Volume) -> bytes:
    nz, ny, nx = volume.dims
    header = _VOLUME_HEADER.pack(VOLUME_MAGIC, FORMAT_VERSION, nz, ny, nx, *volume.spacing)
    return header + volume.voxels.astype(_F32).tobytes(order='C')


def decode_volume(raw: bytes, path: PathLike = '<bytes>') -> Volume:
    _, _, nz, ny, nx, sz, sy, sx = _parse_header(raw, _VOLUME_HEADER, VOLUME_MAGIC, path)
    voxels = _parse_payload(raw, _VOLUME_HEADER.size, nz * ny * nx, path)
    return Volume(voxels=voxels.reshape(nz, ny, nx), spacing=(sz, sy, sx))


def save_volume(volume: Volume, path: PathLike) -> Path:
    """Write a volume as CTV1"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_volume(volume))
    logger.debug(f"Saved volume {volume.dims} to {path}")
    return path


def load_volume(path: PathLike) -> Volume:
    """Read a CTV1 volume"""
    path = Path(path)
    return decode_volume(path.read_bytes(), path)


def encode_sinogram(sinogram: Sinogram) -> bytes:
    n_slices, n_angles, n_detectors = sinogram.data.shape
    header = _SINOGRAM_HEADER.pack(
        SINOGRAM_MAGIC, FORMAT_VERSION, n_slices, n_angles, n_detectors, sinogram.detector_spacing
    )
    return header + sinogram.data.astype(_F32).tobytes(order='C')


def decode_sinogram(raw: bytes, path: PathLike = '<bytes>') -> Sinogram:
    _, _, n_slices, n_angles, n_detectors, spacing = _parse_header(raw, _SINOGRAM_HEADER, SINOGRAM_MAGIC, path)
    data = _parse_payload(raw, _SINOGRAM_HEADER.size, n_slices * n_angles * n_detectors, path)
    return Sinogram(data=data.reshape(n_slices, n_angles, n_detectors), detector_spacing=spacing)


def save_sinogram(sinogram: Sinogram, path: PathLike) -> Path:
    """Write a sinogram as CTS1"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_sinogram(sinogram))
    return path


def load_sinogram(path: PathLike) -> Sinogram:
    """Read a CTS1 sinogram"""
    path = Path(path)
    return decode_sinogram(path.read_bytes(), path)
