"""
Experiment manifest: phantom cases, acquisitions, split, model settings and output layout
"""

from typing import Dict, List

from pydantic import BaseModel, Field, model_validator

from services.config import AcquisitionDefaults, PathConfig
from services.schemas.acquisition_schemas import (
    AcquisitionConfig,
    PhantomSpec,
    reference_acquisition,
    scenario_acquisitions,
)
from services.schemas.gan_schemas import DiscriminatorConfig, GeneratorConfig, TileConfig, TrainConfig

SPLITS = ('train', 'val', 'test')


class CaseSpec(BaseModel):
    """One synthetic patient"""
    case_id: str = Field(..., min_length=1, pattern=r'^[A-Za-z0-9_.-]+$')
    seed: int = Field(..., ge=0)
    phantom: PhantomSpec = Field(default_factory=PhantomSpec)


class CaseSplit(BaseModel):
    train: List[str] = Field(default_factory=list)
    val: List[str] = Field(default_factory=list)
    test: List[str] = Field(default_factory=list)

    def as_dict(self) -> Dict[str, List[str]]:
        return {name: list(getattr(self, name)) for name in SPLITS}


class ExperimentManifest(BaseModel):
    """
    Everything a pipeline run needs; every scenario is simulated on every case.
    Scenario inputs must be 2.0mm and the reference 1.0mm (generator upsamples z by 2).
    """
    name: str = 'desk'
    seed: int = Field(0, ge=0, description="Base seed for acquisition noise and training")
    output_dir: str = PathConfig.OUTPUT_DIR
    cases: List[CaseSpec] = Field(..., min_length=1)
    split: CaseSplit
    reference: AcquisitionConfig = Field(default_factory=reference_acquisition)
    scenarios: Dict[str, AcquisitionConfig] = Field(default_factory=scenario_acquisitions, min_length=1)
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = Field(default_factory=DiscriminatorConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    inference: TileConfig = Field(default_factory=TileConfig)

    @model_validator(mode='after')
    def check_consistency(self) -> 'ExperimentManifest':
        ids = [case.case_id for case in self.cases]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise ValueError(f"duplicate case ids: {duplicates}")

        seen: Dict[str, str] = {}
        for split_name, members in self.split.as_dict().items():
            for case_id in members:
                if case_id not in ids:
                    raise ValueError(f"split '{split_name}' references unknown case '{case_id}'")
                if case_id in seen:
                    raise ValueError(f"case '{case_id}' appears in both '{seen[case_id]}' and '{split_name}'")
                seen[case_id] = split_name
        if not self.split.train or not self.split.test:
            raise ValueError("split needs at least one train and one test case")

        if self.reference.slice_thickness_mm != AcquisitionDefaults.REFERENCE_THICKNESS_MM:
            raise ValueError(f"reference must be {AcquisitionDefaults.REFERENCE_THICKNESS_MM}mm")
        for name, acquisition in self.scenarios.items():
            if name == PathConfig.REFERENCE_NAME:
                raise ValueError(f"scenario name '{name}' is reserved")
            if acquisition.slice_thickness_mm != AcquisitionDefaults.SCENARIO_THICKNESS_MM:
                raise ValueError(f"scenario '{name}' must be {AcquisitionDefaults.SCENARIO_THICKNESS_MM}mm")
        return self

    def case(self, case_id: str) -> CaseSpec:
        for case in self.cases:
            if case.case_id == case_id:
                return case
        raise KeyError(case_id)

    def acquisition_seed(self, case: CaseSpec) -> int:
        """Noise seed for every acquisition of one case (shared across doses)"""
        return self.seed * 1_000_003 + case.seed
