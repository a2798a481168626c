"""
Phantom Service - synthetic chest phantoms on a 0.5mm z grid
Stands in for patient projection data: elliptic body, textured lungs, vessels
and (part-solid) nodules with smooth one-voxel boundaries.
"""

import logging
from typing import List, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from services.config import HUConfig, PhysicsConfig, RadiomicsConfig
from services.exceptions import PhantomSpecError
from services.schemas.acquisition_schemas import LungSpec, NoduleSpec, PhantomSpec
from utils.volume import RoiBox, Volume

logger = logging.getLogger(__name__)


def _smooth_inside(signed_distance: np.ndarray, width: float) -> np.ndarray:
    """Occupancy weight: 1 inside, 0 outside, cosine ramp one voxel wide across the boundary"""
    s = np.clip(signed_distance / width + 0.5, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * s))


def _grid_mm(spec: PhantomSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    nz, ny, nx = spec.grid_shape
    z = (np.arange(nz) - (nz - 1) / 2.0) * PhysicsConfig.PHANTOM_SLICE_MM
    y = (np.arange(ny) - (ny - 1) / 2.0) * spec.pixel_mm
    x = (np.arange(nx) - (nx - 1) / 2.0) * spec.pixel_mm
    return np.meshgrid(z, y, x, indexing='ij')


def _ellipsoid_radius(lung: LungSpec, point) -> np.ndarray:
    return np.sqrt(sum(((p - c) / a) ** 2 for p, c, a in zip(point, lung.center_mm, lung.semi_axes_mm)))


def _check_nodules(spec: PhantomSpec) -> None:
    for index, nodule in enumerate(spec.nodules):
        inside = any(_ellipsoid_radius(lung, nodule.center_mm) < 1.0 for lung in spec.lungs)
        if not inside:
            raise PhantomSpecError(f"Nodule {index} at {nodule.center_mm} mm lies outside every lung region")


def _segment_distance(grid, start: np.ndarray, end: np.ndarray) -> np.ndarray:
    zz, yy, xx = grid
    direction = end - start
    length_sq = float(direction @ direction)
    rel = (zz - start[0], yy - start[1], xx - start[2])
    t = (rel[0] * direction[0] + rel[1] * direction[1] + rel[2] * direction[2]) / length_sq
    t = np.clip(t, 0.0, 1.0)
    return np.sqrt(sum((r - t * d) ** 2 for r, d in zip(rel, direction)))


def _random_point_in_lung(lung: LungSpec, rng: np.random.Generator) -> np.ndarray:
    while True:
        unit = rng.uniform(-1.0, 1.0, size=3)
        if unit @ unit < 0.8:
            return np.asarray(lung.center_mm) + unit * np.asarray(lung.semi_axes_mm)


def nodule_roi(nodule: NoduleSpec, spec: PhantomSpec) -> RoiBox:
    """ROI box centered on a nodule, sized for the reference grid, clipped inside the phantom"""
    nz, ny, nx = spec.grid_shape
    z_factor = int(round(1.0 / PhysicsConfig.PHANTOM_SLICE_MM))
    ez, ey, ex = RadiomicsConfig.ROI_EXTENT
    extent = (min(ez * z_factor, nz), min(ey, ny), min(ex, nx))
    center = (
        nodule.center_mm[0] / PhysicsConfig.PHANTOM_SLICE_MM + (nz - 1) / 2.0,
        nodule.center_mm[1] / spec.pixel_mm + (ny - 1) / 2.0,
        nodule.center_mm[2] / spec.pixel_mm + (nx - 1) / 2.0,
    )
    origin = []
    for c, e, n in zip(center, extent, (nz, ny, nx)):
        start = int(round(c - e / 2.0))
        if e % z_factor == 0 and n == nz:
            start -= start % z_factor
        origin.append(int(np.clip(start, 0, n - e)))
    return RoiBox(origin=tuple(origin), extent=extent)


def generate_phantom(spec: PhantomSpec, seed: int) -> Tuple[Volume, List[RoiBox]]:
    """
    Render a chest phantom.

    Args:
        spec: Phantom geometry and tissue values
        seed: RNG seed for lung texture and vessels

    Returns:
        (volume in HU at 0.5mm z spacing, one RoiBox per nodule)

    Raises:
        PhantomSpecError: If a nodule lies outside every lung
    """
    _check_nodules(spec)
    rng = np.random.default_rng(seed)
    grid = _grid_mm(spec)
    zz, yy, xx = grid
    width = spec.pixel_mm
    base = spec.base_hu

    volume = np.full(spec.grid_shape, base['air'], dtype=np.float64)

    ay, ax = spec.body_semi_axes_mm
    body_radius = np.sqrt((yy / ay) ** 2 + (xx / ax) ** 2)
    body = _smooth_inside((1.0 - body_radius) * min(ay, ax), width)
    volume += body * (base['soft_tissue'] - base['air'])

    # Isotropic-in-mm texture: z voxels are finer than in-plane voxels
    sigma = spec.texture_correlation_voxels
    sigma_z = sigma * spec.pixel_mm / PhysicsConfig.PHANTOM_SLICE_MM
    noise = gaussian_filter(rng.standard_normal(spec.grid_shape), sigma=(sigma_z, sigma, sigma), mode='wrap')
    noise /= max(float(noise.std()), 1e-12)
    lung_hu = base['lung'] + spec.texture_amplitude_hu * noise

    lung_weight = np.zeros(spec.grid_shape)
    for lung in spec.lungs:
        radius = _ellipsoid_radius(lung, grid)
        lung_weight = np.maximum(lung_weight, _smooth_inside((1.0 - radius) * min(lung.semi_axes_mm), width))
    lung_weight *= body
    volume = volume * (1.0 - lung_weight) + lung_weight * lung_hu

    for _ in range(spec.vessel_count):
        lung = spec.lungs[int(rng.integers(len(spec.lungs)))]
        start = _random_point_in_lung(lung, rng)
        end = _random_point_in_lung(lung, rng)
        if np.allclose(start, end):
            continue
        radius = rng.uniform(*spec.vessel_radius_mm)
        weight = _smooth_inside(radius - _segment_distance(grid, start, end), width) * lung_weight
        volume = volume * (1.0 - weight) + weight * base['vessel']

    rois = []
    for nodule in spec.nodules:
        cz, cy, cx = nodule.center_mm
        distance = np.sqrt((zz - cz) ** 2 + (yy - cy) ** 2 + (xx - cx) ** 2)
        halo = _smooth_inside(nodule.radius_mm - distance, width)
        volume = volume * (1.0 - halo) + halo * nodule.halo_hu
        core = _smooth_inside(nodule.core_radius_mm - distance, width)
        volume = volume * (1.0 - core) + core * nodule.core_hu
        rois.append(nodule_roi(nodule, spec))

    volume = np.clip(volume, HUConfig.HU_MIN, HUConfig.HU_MAX).astype(np.float32)
    spacing = (PhysicsConfig.PHANTOM_SLICE_MM, spec.pixel_mm, spec.pixel_mm)
    logger.info(f"Generated phantom {spec.grid_shape} with {len(rois)} nodule(s), seed={seed}")
    return Volume(voxels=volume, spacing=spacing), rois


def lung_mask(spec: PhantomSpec, threshold: float = 0.5) -> np.ndarray:
    """Boolean mask of voxels mostly inside a lung and inside the body"""
    grid = _grid_mm(spec)
    _, yy, xx = grid
    ay, ax = spec.body_semi_axes_mm
    body = _smooth_inside((1.0 - np.sqrt((yy / ay) ** 2 + (xx / ax) ** 2)) * min(ay, ax), spec.pixel_mm)
    weight = np.zeros(spec.grid_shape)
    for lung in spec.lungs:
        radius = _ellipsoid_radius(lung, grid)
        weight = np.maximum(weight, _smooth_inside((1.0 - radius) * min(lung.semi_axes_mm), spec.pixel_mm))
    return weight * body > threshold


def jitter_nodule(spec: PhantomSpec, seed: int, max_shift_mm: float = 3.0) -> PhantomSpec:
    """Copy of a spec with each nodule center shifted by a seeded in-lung offset"""
    rng = np.random.default_rng(seed)
    nodules = []
    for nodule in spec.nodules:
        for _ in range(100):
            shift = rng.uniform(-max_shift_mm, max_shift_mm, size=3)
            center = tuple(float(c + s) for c, s in zip(nodule.center_mm, shift))
            if any(_ellipsoid_radius(lung, center) < 0.6 for lung in spec.lungs):
                break
        else:
            center = nodule.center_mm
        nodules.append(nodule.model_copy(update={'center_mm': center}))
    return spec.model_copy(update={'nodules': nodules})
