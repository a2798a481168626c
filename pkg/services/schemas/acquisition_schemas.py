"""
Pydantic schemas for phantom generation and simulated CT acquisition
Loaded from / written to JSON documents (see docs/schemas)
"""

from enum import Enum
from typing import Dict, List, Literal, Tuple

from pydantic import BaseModel, Field, field_validator

from services.config import AcquisitionDefaults, HUConfig


def _check_hu(value: float) -> float:
    if not HUConfig.HU_MIN <= value <= HUConfig.HU_MAX:
        raise ValueError(f"HU value {value} outside [{HUConfig.HU_MIN}, {HUConfig.HU_MAX}]")
    return value


def _check_positive(values):
    if any(v <= 0 for v in values):
        raise ValueError(f"all components must be > 0, got {values}")
    return values


# ============ PHANTOM SCHEMAS ============

class LungSpec(BaseModel):
    """Ellipsoidal lung region, mm relative to the volume center, (z, y, x)"""
    center_mm: Tuple[float, float, float]
    semi_axes_mm: Tuple[float, float, float]

    check_axes = field_validator('semi_axes_mm')(_check_positive)


class NoduleSpec(BaseModel):
    """Spherical nodule with an optional ground-glass halo"""
    center_mm: Tuple[float, float, float] = Field(..., description="(z, y, x) mm relative to the volume center")
    radius_mm: float = Field(..., gt=0)
    core_hu: float = Field(30.0, description="HU of the solid component")
    halo_hu: float = Field(-350.0, description="HU of the ground-glass component")
    part_solid: bool = True
    core_fraction: float = Field(0.4, gt=0, le=1, description="Solid radius as a fraction of radius_mm")

    check_hu_range = field_validator('core_hu', 'halo_hu')(_check_hu)

    @property
    def core_radius_mm(self) -> float:
        return self.radius_mm * self.core_fraction if self.part_solid else self.radius_mm


def _default_lungs() -> List[LungSpec]:
    return [
        LungSpec(center_mm=(0.0, -2.0, -13.0), semi_axes_mm=(34.0, 18.0, 10.0)),
        LungSpec(center_mm=(0.0, -2.0, 13.0), semi_axes_mm=(34.0, 18.0, 10.0)),
    ]


def _default_nodules() -> List[NoduleSpec]:
    return [NoduleSpec(center_mm=(0.0, -2.0, -13.0), radius_mm=6.0)]


def _default_base_hu() -> Dict[str, float]:
    return {'air': HUConfig.AIR_HU, 'soft_tissue': 40.0, 'lung': -800.0, 'vessel': 40.0}


class PhantomSpec(BaseModel):
    """
    Desk-scale chest phantom on a 0.5mm z grid.
    Geometry is in mm relative to the volume center; in-plane voxels are `pixel_mm` wide.
    """
    grid_shape: Tuple[int, int, int] = Field((128, 64, 64), description="(nz at 0.5mm, ny, nx)")
    pixel_mm: float = Field(1.0, gt=0)
    body_semi_axes_mm: Tuple[float, float] = Field((27.0, 30.0), description="(y, x) elliptic cylinder")
    lungs: List[LungSpec] = Field(default_factory=_default_lungs, min_length=1)
    texture_amplitude_hu: float = Field(60.0, ge=0)
    texture_correlation_voxels: float = Field(2.0, gt=0)
    vessel_count: int = Field(10, ge=0)
    vessel_radius_mm: Tuple[float, float] = (0.6, 1.4)
    nodules: List[NoduleSpec] = Field(default_factory=_default_nodules)
    base_hu: Dict[str, float] = Field(default_factory=_default_base_hu)

    check_positive_dims = field_validator('grid_shape', 'body_semi_axes_mm', 'vessel_radius_mm')(_check_positive)

    @field_validator('base_hu')
    @classmethod
    def check_base_hu(cls, value: Dict[str, float]) -> Dict[str, float]:
        missing = {'air', 'soft_tissue', 'lung', 'vessel'} - set(value)
        if missing:
            raise ValueError(f"base_hu missing tissue classes: {sorted(missing)}")
        for hu in value.values():
            _check_hu(hu)
        return value

    @field_validator('vessel_radius_mm')
    @classmethod
    def check_radius_range(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if value[0] > value[1]:
            raise ValueError(f"vessel radius range must be (min, max), got {value}")
        return value


# ============ ACQUISITION SCHEMAS ============

class ReconstructionWindow(str, Enum):
    """Apodization applied on top of the ramp filter"""
    RAMP = 'ramp'
    HANN = 'hann'
    SHEPP_LOGAN = 'shepp_logan'


class AcquisitionConfig(BaseModel):
    """One simulated acquisition protocol"""
    dose_fraction: float = Field(..., gt=0, le=1)
    slice_thickness_mm: Literal[1.0, 2.0] = 2.0
    photon_fluence: float = Field(AcquisitionDefaults.PHOTON_FLUENCE, gt=0, description="Full-dose counts per ray (N0)")
    window: ReconstructionWindow = ReconstructionWindow(AcquisitionDefaults.WINDOW)
    n_angles: int = Field(AcquisitionDefaults.N_ANGLES, ge=8)
    seed: int = Field(0, ge=0)


def reference_acquisition(seed: int = 0) -> AcquisitionConfig:
    """100% dose, 1.0mm reference protocol"""
    return AcquisitionConfig(
        dose_fraction=AcquisitionDefaults.REFERENCE_DOSE,
        slice_thickness_mm=AcquisitionDefaults.REFERENCE_THICKNESS_MM,
        seed=seed,
    )


def scenario_acquisitions(seed: int = 0) -> Dict[str, AcquisitionConfig]:
    """Scenarios A/B/C: 10%, 25%, 50% dose at 2.0mm"""
    return {
        name: AcquisitionConfig(
            dose_fraction=dose,
            slice_thickness_mm=AcquisitionDefaults.SCENARIO_THICKNESS_MM,
            seed=seed,
        )
        for name, dose in AcquisitionDefaults.SCENARIOS.items()
    }
