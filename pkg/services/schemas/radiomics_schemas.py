"""
Pydantic schemas for radiomic features, normalized errors and paired tests
"""

from enum import Enum
from typing import Dict

from pydantic import BaseModel, Field

from services.config import RadiomicsConfig


class FeatureVector(BaseModel):
    """Nine per-slice radiomic features: five first-order, four GLCM"""
    mean: float
    variance: float = Field(..., ge=0)
    skewness: float
    kurtosis: float
    entropy: float = Field(..., ge=0)
    contrast: float = Field(..., ge=0)
    correlation: float = Field(..., ge=-1.0 - 1e-9, le=1.0 + 1e-9)
    joint_energy: float = Field(..., gt=0, le=1.0 + 1e-9)
    idm: float = Field(..., gt=0, le=1.0 + 1e-9)

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in RadiomicsConfig.FEATURES}


class ErrorSample(BaseModel):
    """Normalized error of one feature on one reference slice"""
    feature: str
    method: str
    slice_index: int = Field(..., ge=0)
    candidate: float
    reference: float
    error: float = Field(..., ge=0)


class Alternative(str, Enum):
    TWO_SIDED = 'two_sided'
    LESS = 'less'           # a tends to be smaller than b
    GREATER = 'greater'


class WilcoxonMethod(str, Enum):
    EXACT = 'exact'
    NORMAL_APPROX = 'normal_approx'


class WilcoxonResult(BaseModel):
    """Paired Wilcoxon signed-rank outcome"""
    n_effective: int = Field(..., ge=0, description="Pairs left after dropping zero differences")
    statistic: float = Field(..., ge=0, description="W = min(W+, W-)")
    w_plus: float = Field(..., ge=0)
    w_minus: float = Field(..., ge=0)
    p_value: float = Field(..., ge=0, le=1)
    method: WilcoxonMethod
    alternative: Alternative = Alternative.TWO_SIDED
    degenerate: bool = Field(False, description="Every difference was zero")

    @property
    def significant(self) -> bool:
        return self.p_value < RadiomicsConfig.SIGNIFICANCE
