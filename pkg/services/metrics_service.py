"""
Metrics Service - tri-planar image quality assessment
PSNR, SSIM and a seeded-random-feature perceptual distance (SRF-PD) standing in
for a learned perceptual metric.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.ndimage import gaussian_filter

from services.config import MetricsConfig
from services.exceptions import DimsMismatchError, ShapeError
from services.neural.ops import conv3d_forward, leaky_relu_forward
from services.schemas.metrics_schemas import MetricReport
from utils.volume import Plane, Volume, extract_plane_slices, hu_to_unit

logger = logging.getLogger(__name__)

_SSIM_TRUNCATE = ((MetricsConfig.SSIM_WINDOW - 1) / 2) / MetricsConfig.SSIM_SIGMA
_SSIM_BORDER = (MetricsConfig.SSIM_WINDOW - 1) // 2


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")


# ============ PSNR / SSIM ============

def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) at data range 1; math.inf for identical images"""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(MetricsConfig.DATA_RANGE ** 2 / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """
    Mean local SSIM with an 11-tap Gaussian window (sigma 1.5), population
    statistics, averaged over the region where the window fits.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    if a.ndim != 2 or min(a.shape) < MetricsConfig.SSIM_WINDOW:
        raise ShapeError(f"ssim needs 2D images of at least {MetricsConfig.SSIM_WINDOW}px, got {a.shape}")

    c1 = (MetricsConfig.SSIM_K1 * MetricsConfig.DATA_RANGE) ** 2
    c2 = (MetricsConfig.SSIM_K2 * MetricsConfig.DATA_RANGE) ** 2

    def blur(image):
        return gaussian_filter(image, MetricsConfig.SSIM_SIGMA, truncate=_SSIM_TRUNCATE, mode='reflect')

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    border = _SSIM_BORDER
    return float(ssim_map[border:-border, border:-border].mean())


# ============ SRF-PD ============

class PerceptualFeatures:
    """
    Fixed random conv stack (3x3, stride 2, LeakyReLU) with weights drawn once
    per seed and shared by every caller.
    """
    _instances: Dict[int, 'PerceptualFeatures'] = {}

    def __init__(self, seed: int):
        rng = np.random.default_rng(seed)
        self.weights: List[np.ndarray] = []
        in_channels = 1
        for out_channels in MetricsConfig.PERCEPTUAL_CHANNELS:
            fan_in = in_channels * 9
            w = rng.standard_normal((out_channels, in_channels, 1, 3, 3)) * math.sqrt(2.0 / fan_in)
            w.setflags(write=False)
            self.weights.append(w)
            in_channels = out_channels

    @classmethod
    def get(cls, seed: int = MetricsConfig.PERCEPTUAL_SEED) -> 'PerceptualFeatures':
        if seed not in cls._instances:
            cls._instances[seed] = cls(seed)
        return cls._instances[seed]

    def stages(self, images: np.ndarray) -> List[np.ndarray]:
        """Channel-unit-normalized features per stage for a stack (N, H, W)"""
        x = (2.0 * np.asarray(images, dtype=np.float64) - 1.0)[:, None, None]
        features = []
        for w in self.weights:
            x, _ = conv3d_forward(x, w, None, stride=(1, 2, 2), padding=(0, 1, 1))
            x, _ = leaky_relu_forward(x, MetricsConfig.PERCEPTUAL_SLOPE)
            norm = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
            features.append(x / (norm + 1e-10))
        return features


def perceptual_distances(a_stack: np.ndarray, b_stack: np.ndarray, seed: int = MetricsConfig.PERCEPTUAL_SEED) -> np.ndarray:
    """SRF-PD for every slice pair of two (N, H, W) stacks"""
    a_stack = np.asarray(a_stack, dtype=np.float64)
    b_stack = np.asarray(b_stack, dtype=np.float64)
    _check_pair(a_stack, b_stack)
    if a_stack.ndim != 3 or min(a_stack.shape[1:]) < MetricsConfig.PERCEPTUAL_MIN_SIZE:
        raise ShapeError(
            f"perceptual distance needs images of at least {MetricsConfig.PERCEPTUAL_MIN_SIZE}px, "
            f"got {a_stack.shape[1:]}"
        )
    network = PerceptualFeatures.get(seed)
    per_stage = [
        np.mean((fa - fb) ** 2, axis=(1, 2, 3, 4))
        for fa, fb in zip(network.stages(a_stack), network.stages(b_stack))
    ]
    return np.mean(per_stage, axis=0)


def perceptual_distance(a: np.ndarray, b: np.ndarray, seed: int = MetricsConfig.PERCEPTUAL_SEED) -> float:
    """Nonnegative, symmetric, zero for identical images"""
    a, b = np.asarray(a), np.asarray(b)
    _check_pair(a, b)
    if a.ndim != 2:
        raise ShapeError(f"perceptual distance needs 2D images, got {a.shape}")
    return float(perceptual_distances(a[None], b[None], seed)[0])


# ============ VOLUME EVALUATION ============

def _plane_metrics(candidate: Volume, reference: Volume, plane: Plane) -> dict:
    cand = np.stack(extract_plane_slices(candidate, plane))
    ref = np.stack(extract_plane_slices(reference, plane))
    size = min(cand.shape[1:])
    result = {'psnr': [], 'ssim': [], 'perceptual': [], 'skipped': []}
    result['psnr'] = [psnr(c, r) for c, r in zip(cand, ref)]
    if size >= MetricsConfig.SSIM_WINDOW:
        result['ssim'] = [ssim(c, r) for c, r in zip(cand, ref)]
    else:
        result['skipped'].append('ssim')
    if size >= MetricsConfig.PERCEPTUAL_MIN_SIZE:
        result['perceptual'] = list(perceptual_distances(cand, ref))
    else:
        result['skipped'].append('perceptual')
    return result


def evaluate_volume_pair(candidate: Volume, reference: Volume, threads: int = 1) -> MetricReport:
    """
    Mean PSNR / SSIM / SRF-PD per plane between two HU volumes (scaled to [0,1] here).

    Planes too small for a metric are skipped with a warning; identical-slice PSNR
    values are excluded from the mean and counted.

    Raises:
        DimsMismatchError: If the volumes differ in dims
    """
    if candidate.dims != reference.dims:
        raise DimsMismatchError(f"candidate dims {candidate.dims} != reference dims {reference.dims}")
    cand = hu_to_unit(candidate)
    ref = hu_to_unit(reference)

    planes = [Plane(p) for p in MetricsConfig.PLANES]
    results = Parallel(n_jobs=threads, prefer='threads')(
        delayed(_plane_metrics)(cand, ref, plane) for plane in planes
    )

    report = MetricReport()
    for plane, result in zip(planes, results):
        name = plane.value
        for skipped in result['skipped']:
            logger.warning(f"Skipping {skipped} on {name} plane: slices {candidate.dims} too small")
            report.skipped_planes.append(f"{name}:{skipped}")
        finite_psnr = [v for v in result['psnr'] if math.isfinite(v)]
        report.infinite_psnr[name] = len(result['psnr']) - len(finite_psnr)
        for metric, values in (('psnr', finite_psnr), ('ssim', result['ssim']), ('perceptual', result['perceptual'])):
            report.counts[metric][name] = len(values)
            report.means[metric][name] = float(np.mean(values)) if values else None
    return report


def aggregate_reports(reports: Sequence[MetricReport]) -> MetricReport:
    """Count-weighted average over every slice of every volume"""
    combined = MetricReport(n_volumes=sum(r.n_volumes for r in reports))
    for metric in MetricsConfig.METRICS:
        for plane in MetricsConfig.PLANES:
            total = 0.0
            count = 0
            for report in reports:
                mean = report.means[metric][plane]
                if mean is not None:
                    total += mean * report.counts[metric][plane]
                    count += report.counts[metric][plane]
            combined.counts[metric][plane] = count
            combined.means[metric][plane] = total / count if count else None
    for plane in MetricsConfig.PLANES:
        combined.infinite_psnr[plane] = sum(r.infinite_psnr[plane] for r in reports)
    combined.skipped_planes = sorted({s for r in reports for s in r.skipped_planes})
    return combined


def perceptual_improvement(cnn: MetricReport, gan: MetricReport, plane: Optional[str] = None) -> Optional[float]:
    """Percent reduction of SRF-PD from CNN to GAN (positive = GAN better)"""
    if plane is None:
        before, after = cnn.plane_average('perceptual'), gan.plane_average('perceptual')
    else:
        before, after = cnn.value('perceptual', plane), gan.value('perceptual', plane)
    if before is None or after is None or before <= 0:
        return None
    return 100.0 * (before - after) / before


def patch_metrics(prediction: np.ndarray, target: np.ndarray) -> Dict[str, float]:
    """Mean axial PSNR / SSIM / SRF-PD over a batch of [0,1] patches (N, 1, D, H, W)"""
    pred = np.asarray(prediction, dtype=np.float64).reshape(-1, *prediction.shape[-2:])
    targ = np.asarray(target, dtype=np.float64).reshape(-1, *target.shape[-2:])
    psnrs = [v for v in (psnr(p, t) for p, t in zip(pred, targ)) if math.isfinite(v)]
    size = min(pred.shape[1:])
    return {
        'psnr': float(np.mean(psnrs)) if psnrs else math.inf,
        'ssim': float(np.mean([ssim(p, t) for p, t in zip(pred, targ)])) if size >= MetricsConfig.SSIM_WINDOW else math.nan,
        'perceptual': float(np.mean(perceptual_distances(pred, targ))) if size >= MetricsConfig.PERCEPTUAL_MIN_SIZE else math.nan,
    }
