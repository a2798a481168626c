"""
Volumetric data model shared by every pipeline stage.
Volume voxels are float32, z-major (z slowest, x fastest), in HU unless scaled to [0,1].
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple

import numpy as np

from services.config import HUConfig
from services.exceptions import RoiBoundsError, ShapeError


_HU_SPAN = HUConfig.HU_MAX - HUConfig.HU_MIN


class Plane(str, Enum):
    """Anatomical slicing planes"""
    AXIAL = 'axial'         # x-y
    CORONAL = 'coronal'     # x-z
    SAGITTAL = 'sagittal'   # y-z


@dataclass(frozen=True)
class Volume:
    """3D scalar field with per-axis spacing in mm"""
    voxels: np.ndarray
    spacing: Tuple[float, float, float]

    def __post_init__(self):
        voxels = np.array(self.voxels, dtype=np.float32, order="C")
        if voxels.ndim != 3 or min(voxels.shape) < 1:
            raise ShapeError(f"Volume voxels must be a non-empty 3D array, got shape {voxels.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ShapeError(f"Volume spacing must be three positive values, got {self.spacing}")
        if not np.all(np.isfinite(voxels)):
            raise ShapeError("Volume voxels must all be finite")
        voxels.setflags(write=False)
        object.__setattr__(self, 'voxels', voxels)
        object.__setattr__(self, 'spacing', spacing)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.voxels.shape)

    @property
    def nbytes(self) -> int:
        return int(self.voxels.nbytes)

    def with_voxels(self, voxels: np.ndarray, spacing: Tuple[float, float, float] = None) -> 'Volume':
        """Return a new volume with the given voxels and (optionally) new spacing"""
        return Volume(voxels=voxels, spacing=spacing or self.spacing)


@dataclass(frozen=True)
class RoiBox:
    """Axis-aligned box in voxel indices, (z, y, x) order"""
    origin: Tuple[int, int, int]
    extent: Tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, 'origin', tuple(int(o) for o in self.origin))
        object.__setattr__(self, 'extent', tuple(int(e) for e in self.extent))
        if any(e < 1 for e in self.extent):
            raise ShapeError(f"RoiBox extent components must be >= 1, got {self.extent}")

    def check_fits(self, dims: Tuple[int, int, int]) -> None:
        for axis, origin, extent, size in zip(('z', 'y', 'x'), self.origin, self.extent, dims):
            if origin < 0 or origin + extent > size:
                raise RoiBoundsError(axis, f"origin {origin} + extent {extent} exceeds size {size}")

    def slices(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(o, o + e) for o, e in zip(self.origin, self.extent))

    def rescale_z(self, factor: int) -> 'RoiBox':
        """Map a box on a fine z grid onto a grid `factor` times coarser"""
        z0 = self.origin[0] // factor
        z1 = -(-(self.origin[0] + self.extent[0]) // factor)
        return RoiBox((z0, self.origin[1], self.origin[2]), (max(1, z1 - z0), self.extent[1], self.extent[2]))

    def to_dict(self) -> dict:
        return {'origin': list(self.origin), 'extent': list(self.extent)}

    @classmethod
    def from_dict(cls, data: dict) -> 'RoiBox':
        return cls(origin=tuple(data['origin']), extent=tuple(data['extent']))


def hu_to_unit(volume: Volume) -> Volume:
    """Linearly map HU [-1024, 3071] onto [0, 1], clamping out-of-range values"""
    scaled = (volume.voxels.astype(np.float32) - np.float32(HUConfig.HU_MIN)) / np.float32(_HU_SPAN)
    return volume.with_voxels(np.clip(scaled, 0.0, 1.0))


def unit_to_hu(volume: Volume) -> Volume:
    """Inverse of hu_to_unit for in-range values"""
    return volume.with_voxels(volume.voxels * np.float32(_HU_SPAN) + np.float32(HUConfig.HU_MIN))


def hu_value_to_unit(hu: float) -> float:
    return float(np.clip((hu - HUConfig.HU_MIN) / _HU_SPAN, 0.0, 1.0))


def extract_plane_slices(volume: Volume, plane: Plane) -> List[np.ndarray]:
    """
    Extract every 2D slice of a volume along a plane.

    Axial yields nz images (ny, nx); coronal yields ny images (nz, nx);
    sagittal yields nx images (nz, ny). Values are copied unmodified.
    """
    voxels = volume.voxels
    plane = Plane(plane)
    if plane is Plane.AXIAL:
        return [voxels[z].copy() for z in range(voxels.shape[0])]
    if plane is Plane.CORONAL:
        return [voxels[:, y, :].copy() for y in range(voxels.shape[1])]
    return [voxels[:, :, x].copy() for x in range(voxels.shape[2])]


def crop_roi(volume: Volume, roi: RoiBox) -> Volume:
    """Copy the voxels inside an ROI into a new volume with inherited spacing"""
    roi.check_fits(volume.dims)
    return volume.with_voxels(volume.voxels[roi.slices()].copy())


def repeat_z(volume: Volume, factor: int) -> Volume:
    """Nearest-neighbour z upsampling: each slice repeated `factor` times"""
    if factor < 1:
        raise ShapeError(f"z repeat factor must be >= 1, got {factor}")
    sz, sy, sx = volume.spacing
    return volume.with_voxels(np.repeat(volume.voxels, factor, axis=0), (sz / factor, sy, sx))


@dataclass(frozen=True)
class Sinogram:
    """Per-slice parallel-beam line integrals, shape (n_slices, n_angles, n_detectors)"""
    data: np.ndarray
    detector_spacing: float

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, order="C")
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"Sinogram data must be a non-empty 3D array, got shape {data.shape}")
        if not self.detector_spacing > 0:
            raise ShapeError(f"Detector spacing must be positive, got {self.detector_spacing}")
        if not np.all(np.isfinite(data)):
            raise ShapeError("Sinogram values must all be finite")
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'detector_spacing', float(self.detector_spacing))

    @property
    def n_slices(self) -> int:
        return int(self.data.shape[0])

    @property
    def n_angles(self) -> int:
        return int(self.data.shape[1])

    @property
    def n_detectors(self) -> int:
        return int(self.data.shape[2])

    @property
    def angles(self) -> np.ndarray:
        """Projection angles in radians, uniformly spanning [0, pi)"""
        return np.arange(self.n_angles, dtype=np.float64) * np.pi / self.n_angles
