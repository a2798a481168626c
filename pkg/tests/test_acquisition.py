import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import disk_image
from services.acquisition_service import (
    attenuation_to_hu,
    back_project,
    detector_count,
    dose_noise_variance,
    fbp_reconstruct,
    forward_project,
    hu_to_attenuation,
    inject_dose_noise,
    simulate_acquisition,
    slab_average,
)
from services.config import PhysicsConfig
from services.exceptions import DoseDomainError, ShapeError
from services.schemas.acquisition_schemas import AcquisitionConfig
from utils.volume import Sinogram, Volume


class TestAttenuation:
    def test_water_and_air(self):
        assert hu_to_attenuation(0.0) == pytest.approx(PhysicsConfig.MU_WATER)
        assert hu_to_attenuation(-1000.0) == pytest.approx(0.0)
        assert hu_to_attenuation(-1024.0) == 0.0

    def test_inverse(self):
        hu = np.array([-900.0, 0.0, 40.0, 1200.0])
        assert_allclose(attenuation_to_hu(hu_to_attenuation(hu)), hu, atol=1e-9)


class TestForwardProjection:
    def test_zero_image(self):
        sinogram = forward_project(np.zeros((16, 16)), 12)
        assert sinogram.shape == (12, detector_count(16))
        assert not sinogram.any()

    def test_disk_chord_length(self):
        mu, radius = 0.02, 20.0
        image = disk_image(64, radius, mu)
        sinogram = forward_project(image, 36)
        center = (sinogram.shape[1] - 1) / 2.0
        t = np.arange(sinogram.shape[1]) - center
        expected = 2.0 * mu * np.sqrt(np.maximum(radius ** 2 - t ** 2, 0.0))
        central = np.abs(t) < 1.0
        for row in sinogram:
            assert_allclose(row[central], expected[central], rtol=0.02)

    def test_linearity(self, rng):
        a = rng.uniform(0, 0.02, size=(24, 24))
        b = rng.uniform(0, 0.02, size=(24, 24))
        combined = forward_project(2.0 * a + 3.0 * b, 10)
        assert_allclose(combined, 2.0 * forward_project(a, 10) + 3.0 * forward_project(b, 10), rtol=1e-9, atol=1e-12)

    def test_non_square_rejected(self):
        with pytest.raises(ShapeError):
            forward_project(np.zeros((8, 10)), 4)

    def test_back_projection_of_single_ray(self):
        n_det = detector_count(32)
        projections = np.zeros((4, n_det))
        projections[0, (n_det - 1) // 2] = 1.0
        image = back_project(projections, image_size=32)
        assert image.min() >= 0.0
        # angle 0 smears along x = const, through the two central columns
        column = image.sum(axis=0)
        assert column.argmax() in (15, 16)
        assert_allclose(image[:, 15], image[0, 15])


class TestDoseNoise:
    def test_full_dose_is_identity(self, rng):
        sinogram = Sinogram(data=rng.uniform(0, 2, size=(2, 8, 11)), detector_spacing=1.0)
        assert inject_dose_noise(sinogram, 1.0, 1e5, seed=3) is sinogram

    @pytest.mark.parametrize("dose", [0.0, -0.1, 1.5])
    def test_dose_domain(self, dose):
        sinogram = Sinogram(data=np.zeros((1, 4, 4)), detector_spacing=1.0)
        with pytest.raises(DoseDomainError):
            inject_dose_noise(sinogram, dose, 1e5, seed=0)

    @pytest.mark.parametrize("dose", [0.5, 0.25, 0.1])
    def test_variance_matches_model(self, dose):
        sinogram = Sinogram(data=np.zeros((4, 250, 100)), detector_spacing=1.0)
        noisy = inject_dose_noise(sinogram, dose, 1e5, seed=42).data.astype(np.float64)
        expected = (1.0 / dose - 1.0) / 1e5
        assert noisy.var() == pytest.approx(expected, rel=0.05)
        assert abs(noisy.mean()) < 5 * math.sqrt(expected / noisy.size)

    def test_quarter_dose_band(self):
        sinogram = Sinogram(data=np.zeros((4, 250, 100)), detector_spacing=1.0)
        variance = inject_dose_noise(sinogram, 0.25, 1e5, seed=1).data.astype(np.float64).var()
        assert 2.85e-5 <= variance <= 3.15e-5
        assert dose_noise_variance(0.0, 0.25, 1e5) == pytest.approx(3e-5)

    def test_seeded(self, rng):
        sinogram = Sinogram(data=rng.uniform(0, 1, size=(3, 6, 7)), detector_spacing=1.0)
        first = inject_dose_noise(sinogram, 0.25, 1e5, seed=9).data
        second = inject_dose_noise(sinogram, 0.25, 1e5, seed=9).data
        other = inject_dose_noise(sinogram, 0.25, 1e5, seed=10).data
        assert np.array_equal(first, second)
        assert not np.array_equal(first, other)

    def test_slice_streams_are_independent_of_batching(self, rng):
        sinogram = Sinogram(data=rng.uniform(0, 1, size=(3, 6, 7)), detector_spacing=1.0)
        whole = inject_dose_noise(sinogram, 0.5, 1e5, seed=5).data
        tail = Sinogram(data=sinogram.data[2:], detector_spacing=1.0)
        assert np.array_equal(inject_dose_noise(tail, 0.5, 1e5, seed=5, first_slice=2).data[0], whole[2])


class TestReconstruction:
    def test_disk_interior(self):
        mu, radius = 0.02, 20.0
        image = disk_image(64, radius, mu)
        sinogram = forward_project(image, 180)
        recon = fbp_reconstruct(sinogram, 'hann', image_size=64)
        coords = np.arange(64) - 31.5
        yy, xx = np.meshgrid(coords, coords, indexing='ij')
        interior = np.sqrt(yy ** 2 + xx ** 2) < radius - 3
        rmse = math.sqrt(float(np.mean((recon[interior] - mu) ** 2)))
        assert rmse < 0.05 * mu

    @pytest.mark.parametrize("window", ['ramp', 'hann', 'shepp_logan'])
    def test_linearity(self, rng, window):
        sinogram = forward_project(disk_image(32, 10.0, 0.02), 60)
        single = fbp_reconstruct(sinogram, window, image_size=32)
        assert_allclose(fbp_reconstruct(2.0 * sinogram, window, image_size=32), 2.0 * single, rtol=1e-9, atol=1e-12)


def _water_cylinder(nz: int = 4, size: int = 32, radius: float = 12.0) -> Volume:
    disk = disk_image(size, radius)
    hu = -1000.0 + 1000.0 * disk
    return Volume(voxels=np.repeat(hu[None], nz, axis=0), spacing=(0.5, 1.0, 1.0))


class TestSimulation:
    def test_output_grids(self):
        phantom = Volume(voxels=np.zeros((128, 16, 16)), spacing=(0.5, 1.0, 1.0))
        thick = simulate_acquisition(phantom, AcquisitionConfig(dose_fraction=1.0, slice_thickness_mm=2.0, n_angles=16))
        thin = simulate_acquisition(phantom, AcquisitionConfig(dose_fraction=1.0, slice_thickness_mm=1.0, n_angles=16))
        assert thick.dims == (32, 16, 16)
        assert thin.dims == (64, 16, 16)
        assert thick.spacing == (2.0, 1.0, 1.0)

    def test_indivisible_depth(self):
        phantom = Volume(voxels=np.zeros((6, 16, 16)), spacing=(0.5, 1.0, 1.0))
        with pytest.raises(ShapeError):
            simulate_acquisition(phantom, AcquisitionConfig(dose_fraction=1.0, slice_thickness_mm=2.0, n_angles=16))

    def test_slab_average(self):
        voxels = np.arange(4, dtype=np.float32)[:, None, None] * np.ones((1, 2, 2), dtype=np.float32)
        slabs = slab_average(Volume(voxels=voxels, spacing=(0.5, 1, 1)), 2)
        assert slabs.dims == (2, 2, 2)
        assert_allclose(slabs.voxels[:, 0, 0], [0.5, 2.5])
        assert slabs.spacing[0] == 1.0

    def test_water_reconstructs_near_zero_hu(self):
        volume = simulate_acquisition(_water_cylinder(), AcquisitionConfig(dose_fraction=1.0, slice_thickness_mm=2.0, n_angles=90))
        center = volume.voxels[0, 12:20, 12:20]
        assert abs(float(center.mean())) < 50.0

    def test_noise_grows_as_dose_falls(self):
        phantom = _water_cylinder()
        spreads = []
        for dose in (1.0, 0.5, 0.25, 0.1):
            values = []
            for seed in range(5):
                cfg = AcquisitionConfig(dose_fraction=dose, slice_thickness_mm=2.0, n_angles=90, seed=seed)
                values.append(float(simulate_acquisition(phantom, cfg).voxels[0, 10:22, 10:22].std()))
            spreads.append(np.mean(values))
        assert all(a < b for a, b in zip(spreads, spreads[1:]))

    def test_noise_scales_with_dose(self):
        phantom = _water_cylinder()

        def recon(dose):
            cfg = AcquisitionConfig(dose_fraction=dose, slice_thickness_mm=2.0, n_angles=90, seed=4)
            return simulate_acquisition(phantom, cfg).voxels.astype(np.float64)

        clean = recon(1.0)
        half, quarter = recon(0.5) - clean, recon(0.25) - clean
        assert quarter.std() / half.std() == pytest.approx(math.sqrt(3.0), rel=0.05)
