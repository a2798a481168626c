"""
Radiomics Service - per-slice radiomic features of nodule ROIs
Fixed-bin-width quantization, symmetric 2D GLCM, five first-order and four
texture features, normalized errors against the reference acquisition and
paired method comparisons.
"""

import logging
import math
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import kurtosis, skew

from services.config import RadiomicsConfig
from services.exceptions import DimsMismatchError, ShapeError
from services.schemas.radiomics_schemas import Alternative, ErrorSample, FeatureVector
from services.stats_service import wilcoxon_signed_rank
from utils.volume import RoiBox, Volume

logger = logging.getLogger(__name__)

GLCM_OFFSETS: Tuple[Tuple[int, int], ...] = ((0, 1), (1, 0), (1, 1), (1, -1))
ERROR_COLUMNS = ['case', 'feature', 'method', 'slice', 'candidate', 'reference', 'error']
BOXPLOT_COLUMNS = ['feature', 'method', 'n', 'min', 'q1', 'median', 'q3', 'max']
STATS_COLUMNS = ['feature', 'comparison', 'n', 'W', 'p', 'p_less', 'method', 'degenerate', 'significant']


# ============ QUANTIZATION / GLCM ============

def quantize_roi(image: np.ndarray, bin_width: float = RadiomicsConfig.BIN_WIDTH_HU) -> Tuple[np.ndarray, int]:
    """
    Fixed-bin-width labels anchored at the slice minimum.

    Returns:
        (labels in [0, n_bins), n_bins)
    """
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise ShapeError("cannot quantize an empty slice")
    labels = np.floor((image - image.min()) / bin_width).astype(np.int64)
    return labels, int(labels.max()) + 1


def compute_glcm(labels: np.ndarray, n_bins: Optional[int] = None) -> np.ndarray:
    """
    Symmetric co-occurrence matrix summed over four distance-1 offsets and
    normalized to sum 1.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.size < 2:
        raise ShapeError(f"GLCM needs a 2D label image with >= 2 pixels, got {labels.shape}")
    n_bins = int(labels.max()) + 1 if n_bins is None else n_bins
    h, w = labels.shape
    glcm = np.zeros((n_bins, n_bins), dtype=np.float64)
    for dy, dx in GLCM_OFFSETS:
        y0, y1 = 0, h - dy
        x0, x1 = max(0, -dx), w - max(0, dx)
        if y1 <= y0 or x1 <= x0:
            continue
        first = labels[y0:y1, x0:x1].ravel()
        second = labels[y0 + dy:y1 + dy, x0 + dx:x1 + dx].ravel()
        np.add.at(glcm, (first, second), 1.0)
        np.add.at(glcm, (second, first), 1.0)
    total = glcm.sum()
    if total == 0:
        raise ShapeError(f"label image {labels.shape} has no neighbouring pixel pairs")
    return glcm / total


# ============ FEATURES ============

def first_order_features(image: np.ndarray, labels: np.ndarray) -> Dict[str, float]:
    values = np.asarray(image, dtype=np.float64).ravel()
    variance = float(np.var(values))
    if variance > 0:
        skewness = float(skew(values, bias=True))
        kurt = float(kurtosis(values, fisher=False, bias=True))
    else:
        skewness, kurt = 0.0, 0.0
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    entropy = float(-np.sum(p * np.log2(p)))
    return {
        'mean': float(values.mean()),
        'variance': variance,
        'skewness': skewness,
        'kurtosis': kurt,
        'entropy': max(entropy, 0.0),
    }


def glcm_features(glcm: np.ndarray) -> Dict[str, float]:
    i, j = np.indices(glcm.shape)
    mu_i = float(np.sum(i * glcm))
    mu_j = float(np.sum(j * glcm))
    sigma_i = math.sqrt(float(np.sum((i - mu_i) ** 2 * glcm)))
    sigma_j = math.sqrt(float(np.sum((j - mu_j) ** 2 * glcm)))
    if sigma_i * sigma_j > 0:
        correlation = float(np.sum((i - mu_i) * (j - mu_j) * glcm)) / (sigma_i * sigma_j)
        correlation = min(1.0, max(-1.0, correlation))
    else:
        correlation = 1.0
    return {
        'contrast': float(np.sum(glcm * (i - j) ** 2)),
        'correlation': correlation,
        'joint_energy': float(np.sum(glcm ** 2)),
        'idm': float(np.sum(glcm / (1.0 + (i - j) ** 2))),
    }


def feature_vector(image: np.ndarray, bin_width: float = RadiomicsConfig.BIN_WIDTH_HU) -> FeatureVector:
    """
    Nine radiomic features of one 2D HU ROI slice.

    Raises:
        ShapeError: If the slice is smaller than 2x2
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or min(image.shape) < 2:
        raise ShapeError(f"feature extraction needs a 2D slice of at least 2x2, got {image.shape}")
    labels, n_bins = quantize_roi(image, bin_width)
    features = first_order_features(image, labels)
    features.update(glcm_features(compute_glcm(labels, n_bins)))
    return FeatureVector(**features)


def extract_slice_features(roi: np.ndarray, threads: int = 1) -> pd.DataFrame:
    """Per-slice FeatureVectors of a (z, y, x) ROI as a DataFrame indexed by slice"""
    roi = np.asarray(roi, dtype=np.float64)
    if roi.ndim != 3:
        raise ShapeError(f"expected a 3D ROI, got {roi.shape}")
    vectors = Parallel(n_jobs=threads, prefer='threads')(delayed(feature_vector)(s) for s in roi)
    frame = pd.DataFrame([v.as_dict() for v in vectors], columns=list(RadiomicsConfig.FEATURES))
    frame.index.name = 'slice'
    return frame


def z_matched_roi(volume: Volume, roi: RoiBox, z_factor: int = 1) -> np.ndarray:
    """
    Crop an ROI given on the reference grid from a volume whose slices are
    `z_factor` times thicker; each reference slice takes its containing thick slice.
    """
    z_index = (roi.origin[0] + np.arange(roi.extent[0])) // z_factor
    if z_index[-1] >= volume.dims[0]:
        raise DimsMismatchError(f"ROI z range {roi.origin[0]}+{roi.extent[0]} does not fit {volume.dims} at factor {z_factor}")
    roi.check_fits((roi.origin[0] + roi.extent[0], *volume.dims[1:]))
    _, ys, xs = roi.slices()
    return volume.voxels[z_index][:, ys, xs]


# ============ ERRORS / COMPARISON ============

def normalized_error(candidate: float, reference: float, epsilon: float = RadiomicsConfig.ERROR_EPSILON) -> float:
    """|x_hat - x| / max(|x|, eps)"""
    return abs(candidate - reference) / max(abs(reference), epsilon)


def error_samples(candidate: pd.DataFrame, reference: pd.DataFrame, method: str) -> List[ErrorSample]:
    samples = []
    for feature in RadiomicsConfig.FEATURES:
        for index, (x_hat, x) in enumerate(zip(candidate[feature], reference[feature])):
            samples.append(ErrorSample(
                feature=feature,
                method=method,
                slice_index=index,
                candidate=float(x_hat),
                reference=float(x),
                error=normalized_error(float(x_hat), float(x)),
            ))
    return samples


def build_error_table(
    roi_sets: Mapping[str, np.ndarray],
    reference: np.ndarray,
    case_id: str = '',
    threads: int = 1,
) -> pd.DataFrame:
    """
    Per-slice normalized errors of every method's ROI against the reference ROI.

    Raises:
        DimsMismatchError: If a candidate ROI differs from the reference in dims
    """
    reference = np.asarray(reference)
    for method, roi in roi_sets.items():
        if np.shape(roi) != reference.shape:
            raise DimsMismatchError(f"{method} ROI dims {np.shape(roi)} != reference ROI dims {reference.shape}")
    reference_features = extract_slice_features(reference, threads)
    rows = []
    for method, roi in roi_sets.items():
        samples = error_samples(extract_slice_features(roi, threads), reference_features, method)
        rows.extend({'case': case_id, **s.model_dump()} for s in samples)
    table = pd.DataFrame(rows).rename(columns={'slice_index': 'slice'})
    return table.reindex(columns=ERROR_COLUMNS)


def five_number_summary(values: np.ndarray) -> Dict[str, float]:
    q = np.percentile(np.asarray(values, dtype=np.float64), [0, 25, 50, 75, 100])
    return dict(zip(['min', 'q1', 'median', 'q3', 'max'], (float(v) for v in q)))


def _paired_errors(table: pd.DataFrame, feature: str, method: str) -> pd.Series:
    rows = table[(table['feature'] == feature) & (table['method'] == method)]
    return rows.set_index(['case', 'slice'])['error'].sort_index()


def summarize_error_table(
    table: pd.DataFrame,
    comparisons: Tuple[Tuple[str, str], ...] = RadiomicsConfig.COMPARISONS,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Box-plot summaries per feature x method and paired Wilcoxon tests per
    feature x comparison, pairing errors on (case, slice).

    Returns:
        (boxplot frame, stats frame)
    """
    methods = [m for m in RadiomicsConfig.METHODS if m in set(table['method'])]
    box_rows = []
    for feature in RadiomicsConfig.FEATURES:
        for method in methods:
            errors = _paired_errors(table, feature, method)
            box_rows.append({'feature': feature, 'method': method, 'n': int(errors.size), **five_number_summary(errors)})

    stat_rows = []
    for feature in RadiomicsConfig.FEATURES:
        for first, second in comparisons:
            if first not in methods or second not in methods:
                continue
            a, b = _paired_errors(table, feature, first).align(_paired_errors(table, feature, second), join='inner')
            two_sided = wilcoxon_signed_rank(a.values, b.values, Alternative.TWO_SIDED)
            less = wilcoxon_signed_rank(a.values, b.values, Alternative.LESS)
            stat_rows.append({
                'feature': feature,
                'comparison': f"{first}_vs_{second}",
                'n': two_sided.n_effective,
                'W': two_sided.statistic,
                'p': two_sided.p_value,
                'p_less': less.p_value,
                'method': two_sided.method.value,
                'degenerate': two_sided.degenerate,
                'significant': two_sided.significant,
            })
    return pd.DataFrame(box_rows, columns=BOXPLOT_COLUMNS), pd.DataFrame(stat_rows, columns=STATS_COLUMNS)


def compare_methods(
    roi_sets: Mapping[str, np.ndarray],
    reference: np.ndarray,
    case_id: str = '',
    threads: int = 1,
) -> Dict[str, pd.DataFrame]:
    """
    Error table, box-plot summaries and pairwise Wilcoxon results for
    candidate ROIs (e.g. raw / cnn / gan) against the reference ROI.

    Raises:
        DimsMismatchError: If ROI dims differ
    """
    errors = build_error_table(roi_sets, reference, case_id, threads)
    boxplot, stats = summarize_error_table(errors)
    logger.debug(f"Compared {len(roi_sets)} method(s) over {reference.shape[0]} slice(s)")
    return {'errors': errors, 'boxplot': boxplot, 'stats': stats}


def error_reduction_count(boxplot: pd.DataFrame, method: str = 'gan', baseline: str = 'raw') -> int:
    """Number of features whose median error for `method` is below the baseline's"""
    medians = boxplot.pivot(index='feature', columns='method', values='median')
    if method not in medians or baseline not in medians:
        return 0
    return int((medians[method] < medians[baseline]).sum())
