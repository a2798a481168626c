"""
Stats Service - paired Wilcoxon signed-rank test
Exact null distribution by dynamic programming for small tie-free samples,
normal approximation with tie and continuity correction otherwise.
"""

import logging
import math
from functools import lru_cache
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm, rankdata

from services.config import RadiomicsConfig
from services.exceptions import ShapeError
from services.schemas.radiomics_schemas import Alternative, WilcoxonMethod, WilcoxonResult

logger = logging.getLogger(__name__)


@lru_cache(maxsize=None)
def signed_rank_counts(n: int) -> Tuple[int, ...]:
    """
    Number of sign assignments of ranks 1..n giving each positive rank sum
    0..n(n+1)/2 (subset-sum counts).
    """
    total = n * (n + 1) // 2
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for rank in range(1, n + 1):
        counts[rank:] = counts[rank:] + counts[:-rank].copy()
    return tuple(int(c) for c in counts)


def exact_p_value(w_plus: int, n: int, alternative: Alternative) -> float:
    """Exact p of an integer positive rank sum under H0 (all 2^n sign patterns equally likely)"""
    counts = signed_rank_counts(n)
    space = 2 ** n
    lower = sum(counts[:w_plus + 1]) / space        # P(W+ <= w)
    upper = sum(counts[w_plus:]) / space            # P(W+ >= w)
    if alternative == Alternative.LESS:
        return lower
    if alternative == Alternative.GREATER:
        return upper
    return min(1.0, 2.0 * min(lower, upper))


def normal_p_value(w_plus: float, ranked: np.ndarray, alternative: Alternative) -> float:
    n = ranked.size
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranked, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48.0
    sd = math.sqrt(variance)
    if alternative == Alternative.LESS:
        return float(norm.cdf((w_plus - mean + 0.5) / sd))
    if alternative == Alternative.GREATER:
        return float(norm.sf((w_plus - mean - 0.5) / sd))
    z = max(abs(w_plus - mean) - 0.5, 0.0) / sd
    return min(1.0, float(2.0 * norm.sf(z)))


def wilcoxon_signed_rank(
    a: Sequence[float],
    b: Sequence[float],
    alternative: Union[Alternative, str] = Alternative.TWO_SIDED,
) -> WilcoxonResult:
    """
    Paired Wilcoxon signed-rank test on d = a - b.

    Zero differences are dropped; |d| is ranked with mid-ranks for ties.
    `less` tests whether a tends to be smaller than b.

    Args:
        a: First sample
        b: Paired second sample
        alternative: two_sided, less or greater

    Returns:
        WilcoxonResult; all-zero differences give a degenerate result with p = 1

    Raises:
        ShapeError: If the samples are empty or of different lengths
    """
    alternative = Alternative(alternative)
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ShapeError(f"paired samples differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise ShapeError("wilcoxon_signed_rank needs at least one pair")

    d = a - b
    d = d[d != 0]
    n = int(d.size)
    if n == 0:
        logger.debug("All paired differences are zero; returning degenerate result")
        return WilcoxonResult(
            n_effective=0, statistic=0.0, w_plus=0.0, w_minus=0.0, p_value=1.0,
            method=WilcoxonMethod.EXACT, alternative=alternative, degenerate=True,
        )

    magnitude = np.abs(d)
    ranks = rankdata(magnitude, method='average')
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    has_ties = np.unique(magnitude).size < n

    if n <= RadiomicsConfig.EXACT_MAX_N and not has_ties:
        method = WilcoxonMethod.EXACT
        p_value = exact_p_value(int(round(w_plus)), n, alternative)
    else:
        method = WilcoxonMethod.NORMAL_APPROX
        p_value = normal_p_value(w_plus, magnitude, alternative)

    return WilcoxonResult(
        n_effective=n,
        statistic=min(w_plus, w_minus),
        w_plus=w_plus,
        w_minus=w_minus,
        p_value=float(min(1.0, max(p_value, np.finfo(float).tiny))),
        method=method,
        alternative=alternative,
    )
