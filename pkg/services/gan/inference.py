"""
Tiled whole-volume inference with linear-ramp overlap blending
"""

import logging
from itertools import product
from typing import List, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from services.config import InferenceConfig
from services.exceptions import ShapeError
from services.gan.models import Generator
from utils.volume import Volume, hu_to_unit, unit_to_hu

logger = logging.getLogger(__name__)


def tile_starts(size: int, tile: int, overlap: int) -> List[int]:
    """
    Tile origins along one axis; consecutive tiles share at least `overlap`
    voxels and the last tile ends at the volume edge.

    Raises:
        ShapeError: If the tile exceeds the axis or overlap leaves no stride
    """
    if tile > size:
        raise ShapeError(f"tile extent {tile} exceeds volume extent {size}")
    if tile == size:
        return [0]
    step = tile - overlap
    if step < 1:
        raise ShapeError(f"overlap {overlap} must be smaller than tile extent {tile}")
    starts = list(range(0, size - tile + 1, step))
    if starts[-1] + tile < size:
        starts.append(size - tile)
    return starts


def ramp_profile(length: int, left_overlap: int, right_overlap: int) -> np.ndarray:
    """Strictly positive weights, rising linearly across the left overlap and falling across the right"""
    i = np.arange(length, dtype=np.float64)
    rise = (i + 1) / (left_overlap + 1) if left_overlap > 0 else np.ones(length)
    fall = (length - i) / (right_overlap + 1) if right_overlap > 0 else np.ones(length)
    return np.minimum(1.0, np.minimum(rise, fall))


def axis_weights(starts: Sequence[int], tile: int, size: int) -> List[np.ndarray]:
    """
    Normalized 1D blend weights per tile; at every position the weights of the
    tiles covering it sum to 1.
    """
    raw = []
    for k, start in enumerate(starts):
        left = starts[k - 1] + tile - start if k > 0 else 0
        right = start + tile - starts[k + 1] if k + 1 < len(starts) else 0
        raw.append(ramp_profile(tile, max(left, 0), max(right, 0)))
    total = np.zeros(size)
    for start, weights in zip(starts, raw):
        total[start:start + tile] += weights
    return [weights / total[start:start + tile] for start, weights in zip(starts, raw)]


def blend_weight_field(
    out_dims: Tuple[int, int, int],
    tile_out: Tuple[int, int, int],
    starts: Tuple[Sequence[int], Sequence[int], Sequence[int]],
) -> np.ndarray:
    """Sum of every tile's 3D blend weight over the output grid (1 everywhere for a valid tiling)"""
    per_axis = [axis_weights(s, t, n) for s, t, n in zip(starts, tile_out, out_dims)]
    field = np.zeros(out_dims)
    for (iz, z0), (iy, y0), (ix, x0) in product(*(list(enumerate(s)) for s in starts)):
        weight = np.einsum('i,j,k->ijk', per_axis[0][iz], per_axis[1][iy], per_axis[2][ix])
        field[z0:z0 + tile_out[0], y0:y0 + tile_out[1], x0:x0 + tile_out[2]] += weight
    return field


def normalize_volume(
    generator: Generator,
    low: Volume,
    tile_dims: Tuple[int, int, int] = InferenceConfig.TILE_DIMS,
    z_overlap: int = InferenceConfig.Z_OVERLAP,
    xy_overlap: int = InferenceConfig.Z_OVERLAP,
) -> Volume:
    """
    Run the generator over a whole HU volume tile by tile.

    Input overlap of k voxels in z becomes 2k in the doubled output; overlapping
    outputs are blended with linear ramps.

    Args:
        generator: Trained z-upsampling generator
        low: Input HU volume
        tile_dims: Input tile (D, H, W)
        z_overlap: Input voxels shared by z-neighbouring tiles
        xy_overlap: Voxels shared by in-plane neighbours

    Returns:
        HU volume with dims (2*nz, ny, nx) and half the z spacing

    Raises:
        ShapeError: If a tile extent exceeds the volume
    """
    nz, ny, nx = low.dims
    td, th, tw = tile_dims
    z_starts = tile_starts(nz, td, z_overlap)
    y_starts = tile_starts(ny, th, xy_overlap)
    x_starts = tile_starts(nx, tw, xy_overlap)

    out_dims = (2 * nz, ny, nx)
    tile_out = (2 * td, th, tw)
    out_starts = ([2 * z for z in z_starts], y_starts, x_starts)
    wz, wy, wx = (axis_weights(s, t, n) for s, t, n in zip(out_starts, tile_out, out_dims))

    unit = hu_to_unit(low).voxels
    accumulated = np.zeros(out_dims, dtype=np.float64)
    weight_sum = np.zeros(out_dims, dtype=np.float64)
    tiles = list(product(enumerate(z_starts), enumerate(y_starts), enumerate(x_starts)))
    for (iz, z0), (iy, y0), (ix, x0) in tqdm(tiles, desc='normalize', leave=False, disable=None):
        patch = unit[z0:z0 + td, y0:y0 + th, x0:x0 + tw][None, None]
        prediction = generator.forward(patch)[0, 0].astype(np.float64)
        weight = np.einsum('i,j,k->ijk', wz[iz], wy[iy], wx[ix])
        region = (slice(2 * z0, 2 * z0 + tile_out[0]), slice(y0, y0 + th), slice(x0, x0 + tw))
        accumulated[region] += prediction * weight
        weight_sum[region] += weight

    result = accumulated / weight_sum
    sz, sy, sx = low.spacing
    logger.debug(f"Normalized {low.dims} -> {out_dims} with {len(tiles)} tile(s)")
    return unit_to_hu(Volume(voxels=result, spacing=(sz / 2.0, sy, sx)))
