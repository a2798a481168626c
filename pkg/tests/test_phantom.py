from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from services.config import HUConfig, PhysicsConfig
from services.exceptions import PhantomSpecError
from services.phantom_service import _ellipsoid_radius, _grid_mm, generate_phantom, jitter_nodule, nodule_roi
from services.schemas.acquisition_schemas import AcquisitionConfig, NoduleSpec, PhantomSpec, ReconstructionWindow


class TestGeneratePhantom:
    def test_deterministic(self, small_spec):
        first, rois_a = generate_phantom(small_spec, seed=5)
        second, rois_b = generate_phantom(small_spec, seed=5)
        assert np.array_equal(first.voxels, second.voxels)
        assert rois_a == rois_b
        other, _ = generate_phantom(small_spec, seed=6)
        assert not np.array_equal(first.voxels, other.voxels)

    def test_grid_and_range(self, small_phantom, small_spec):
        volume, rois = small_phantom
        assert volume.dims == small_spec.grid_shape
        assert volume.spacing == (PhysicsConfig.PHANTOM_SLICE_MM, 1.0, 1.0)
        assert volume.voxels.min() >= HUConfig.HU_MIN
        assert volume.voxels.max() <= HUConfig.HU_MAX
        assert len(rois) == 1
        rois[0].check_fits(volume.dims)

    def test_air_outside_body(self, small_phantom):
        volume, _ = small_phantom
        assert volume.voxels[:, 0, 0].max() == pytest.approx(HUConfig.AIR_HU)

    def test_lung_mean(self):
        spec = PhantomSpec()
        volume, _ = generate_phantom(spec, seed=3)
        grid = _grid_mm(spec)
        inside = np.zeros(spec.grid_shape, dtype=bool)
        for lung in spec.lungs:
            inside |= _ellipsoid_radius(lung, grid) < 0.9
        mean = float(volume.voxels[inside].mean())
        assert -850.0 <= mean <= -750.0

    def test_nodule_is_denser_than_lung(self, small_spec):
        volume, rois = generate_phantom(small_spec, seed=1)
        nz, ny, nx = small_spec.grid_shape
        nodule = small_spec.nodules[0]
        z = int(round(nodule.center_mm[0] / PhysicsConfig.PHANTOM_SLICE_MM + (nz - 1) / 2.0))
        y = int(round(nodule.center_mm[1] + (ny - 1) / 2.0))
        x = int(round(nodule.center_mm[2] + (nx - 1) / 2.0))
        assert volume.voxels[z, y, x] > -200.0

    def test_no_nodules(self, small_spec):
        volume, rois = generate_phantom(small_spec.model_copy(update={'nodules': []}), seed=2)
        assert rois == []
        assert volume.dims == small_spec.grid_shape

    def test_nodule_outside_lungs(self, small_spec):
        spec = small_spec.model_copy(update={'nodules': [NoduleSpec(center_mm=(0.0, 0.0, 0.0), radius_mm=2.0)]})
        with pytest.raises(PhantomSpecError):
            generate_phantom(spec, seed=0)


class TestNoduleRoi:
    def test_default_extent_on_fine_grid(self):
        spec = PhantomSpec()
        roi = nodule_roi(spec.nodules[0], spec)
        assert roi.extent == (60, 32, 32)
        assert roi.origin[0] % 2 == 0
        roi.check_fits(spec.grid_shape)
        assert roi.rescale_z(2).extent == (30, 32, 32)

    def test_clipped_to_small_grid(self, small_spec):
        roi = nodule_roi(small_spec.nodules[0], small_spec)
        assert roi.extent == (16, 32, 32)
        assert roi.origin == (0, 0, 0)

    def test_jitter_stays_in_lung(self):
        spec = PhantomSpec()
        for seed in range(10):
            jittered = jitter_nodule(spec, seed)
            center = jittered.nodules[0].center_mm
            assert any(_ellipsoid_radius(lung, center) < 1.0 for lung in spec.lungs)
        assert jitter_nodule(spec, 4) == jitter_nodule(spec, 4)


class TestSchemaDocuments:
    SCHEMA_DIR = Path(__file__).resolve().parent.parent / "docs" / "schemas"

    def test_example_phantom_matches_defaults(self):
        spec = PhantomSpec.model_validate_json((self.SCHEMA_DIR / "phantom_spec.json").read_text())
        assert spec == PhantomSpec()

    def test_example_acquisition(self):
        cfg = AcquisitionConfig.model_validate_json((self.SCHEMA_DIR / "acquisition_config.json").read_text())
        assert cfg.dose_fraction == 0.25
        assert cfg.window == ReconstructionWindow.HANN

    @pytest.mark.parametrize("patch", [{'grid_shape': [0, 8, 8]}, {'base_hu': {'air': -1000.0}},
                                       {'vessel_radius_mm': [2.0, 1.0]}])
    def test_invalid_phantom(self, patch):
        with pytest.raises(ValidationError):
            PhantomSpec.model_validate({**PhantomSpec().model_dump(), **patch})
