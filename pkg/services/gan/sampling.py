"""
Body-aware random patch sampling of aligned low-quality / reference volume pairs
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from services.config import HUConfig, TrainDefaults
from services.exceptions import DimsMismatchError, PatchSamplingError, ShapeError
from services.schemas.gan_schemas import TrainConfig
from utils.volume import Volume, hu_value_to_unit

logger = logging.getLogger(__name__)

BODY_THRESHOLD_UNIT = hu_value_to_unit(HUConfig.BODY_THRESHOLD_HU)


@dataclass(frozen=True)
class PatchPair:
    """x: (D, H, W) input patch; y: (2D, H, W) reference patch; both [0,1]-scaled"""
    x: np.ndarray
    y: np.ndarray
    x_origin: Tuple[int, int, int]
    y_origin: Tuple[int, int, int]


def body_fraction(patch: np.ndarray) -> float:
    """Fraction of voxels above -500 HU (patch already scaled to [0,1])"""
    return float(np.mean(patch > BODY_THRESHOLD_UNIT))


def check_pair_dims(low: Volume, ref: Volume) -> None:
    nz, ny, nx = low.dims
    if ref.dims != (2 * nz, ny, nx):
        raise DimsMismatchError(f"reference dims {ref.dims} must be (2*{nz}, {ny}, {nx})")


def sample_patch_pairs(low: Volume, ref: Volume, cfg: TrainConfig, seed, n: int) -> List[PatchPair]:
    """
    Rejection-sample `n` aligned patch pairs whose input body fraction is >= cfg.body_fraction.

    Args:
        low: [0,1]-scaled low-dose / thick volume
        ref: [0,1]-scaled reference with doubled z extent
        cfg: Patch dims and body-fraction threshold
        seed: RNG seed (int or sequence of ints)
        n: Number of pairs

    Raises:
        PatchSamplingError: If 1000*n candidates yield fewer than n accepted patches
    """
    check_pair_dims(low, ref)
    pd, ph, pw = cfg.patch_dims
    nz, ny, nx = low.dims
    if pd > nz or ph > ny or pw > nx:
        raise ShapeError(f"patch {cfg.patch_dims} does not fit volume {low.dims}")

    rng = np.random.default_rng(seed)
    max_attempts = TrainDefaults.SAMPLING_ATTEMPTS_PER_PATCH * n
    pairs: List[PatchPair] = []
    attempts = 0
    while len(pairs) < n:
        if attempts >= max_attempts:
            raise PatchSamplingError(
                f"accepted {len(pairs)}/{n} patches after {attempts} attempts "
                f"(body fraction >= {cfg.body_fraction})"
            )
        attempts += 1
        z0 = int(rng.integers(0, nz - pd + 1))
        y0 = int(rng.integers(0, ny - ph + 1))
        x0 = int(rng.integers(0, nx - pw + 1))
        x = low.voxels[z0:z0 + pd, y0:y0 + ph, x0:x0 + pw]
        if body_fraction(x) < cfg.body_fraction:
            continue
        y = ref.voxels[2 * z0:2 * (z0 + pd), y0:y0 + ph, x0:x0 + pw]
        pairs.append(PatchPair(x=x.copy(), y=y.copy(), x_origin=(z0, y0, x0), y_origin=(2 * z0, y0, x0)))
    logger.debug(f"Sampled {n} patch pairs in {attempts} attempts")
    return pairs


def sample_batch(
    volumes: Sequence[Tuple[Volume, Volume]],
    cfg: TrainConfig,
    rng: np.random.Generator,
    n: int,
) -> List[PatchPair]:
    """Draw `n` pairs, each from a uniformly chosen (low, ref) volume pair"""
    pairs = []
    for _ in range(n):
        low, ref = volumes[int(rng.integers(len(volumes)))]
        pairs.extend(sample_patch_pairs(low, ref, cfg, int(rng.integers(2 ** 63)), 1))
    return pairs


def stack_pairs(pairs: Sequence[PatchPair]) -> Tuple[np.ndarray, np.ndarray]:
    """Batch tensors (N, 1, D, H, W) and (N, 1, 2D, H, W)"""
    x = np.stack([p.x for p in pairs])[:, None].astype(np.float32)
    y = np.stack([p.y for p in pairs])[:, None].astype(np.float32)
    return x, y
