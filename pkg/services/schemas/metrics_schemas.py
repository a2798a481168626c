"""
Pydantic schema for tri-planar image quality reports
"""

from typing import Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, Field

from services.config import MetricsConfig


def _empty_grid(default):
    return {metric: {plane: default for plane in MetricsConfig.PLANES} for metric in MetricsConfig.METRICS}


class MetricReport(BaseModel):
    """
    Mean PSNR / SSIM / perceptual distance per plane over every slice evaluated.

    `means[metric][plane]` is None when no slice contributed (all skipped, or
    every PSNR slice was identical). Identical-slice PSNR values are excluded
    from the mean and counted in `infinite_psnr`.
    """
    means: Dict[str, Dict[str, Optional[float]]] = Field(default_factory=lambda: _empty_grid(None))
    counts: Dict[str, Dict[str, int]] = Field(default_factory=lambda: _empty_grid(0))
    infinite_psnr: Dict[str, int] = Field(default_factory=lambda: {p: 0 for p in MetricsConfig.PLANES})
    skipped_planes: List[str] = Field(default_factory=list)
    n_volumes: int = 1

    def value(self, metric: str, plane: str) -> Optional[float]:
        return self.means[metric][plane]

    def plane_average(self, metric: str) -> Optional[float]:
        """Count-weighted mean over the three planes"""
        total = sum(self.counts[metric][p] for p in MetricsConfig.PLANES if self.means[metric][p] is not None)
        if not total:
            return None
        return sum(
            self.means[metric][p] * self.counts[metric][p]
            for p in MetricsConfig.PLANES if self.means[metric][p] is not None
        ) / total

    def to_frame(self) -> pd.DataFrame:
        """One row per metric x plane"""
        rows = []
        for metric in MetricsConfig.METRICS:
            for plane in MetricsConfig.PLANES:
                rows.append({
                    'metric': metric,
                    'plane': plane,
                    'mean': self.means[metric][plane],
                    'count': self.counts[metric][plane],
                    'infinite': self.infinite_psnr[plane] if metric == 'psnr' else 0,
                })
        return pd.DataFrame(rows)
