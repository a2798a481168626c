"""
Shared fixtures: small seeded volumes, a 16x32x32 phantom, tiny network
configurations and a three-case manifest rooted in a temporary directory.
"""

import numpy as np
import pytest

from services.acquisition_service import slab_average
from services.phantom_service import generate_phantom
from services.schemas.acquisition_schemas import AcquisitionConfig, LungSpec, NoduleSpec, PhantomSpec
from services.schemas.gan_schemas import DiscriminatorConfig, GeneratorConfig, TileConfig, TrainConfig
from services.schemas.manifest_schemas import CaseSpec, CaseSplit, ExperimentManifest
from utils.volume import Volume, hu_to_unit


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of a float64 array"""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = f(x)
        flat[i] = original - eps
        minus = f(x)
        flat[i] = original
        out[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


def disk_image(size: int, radius: float, value: float = 1.0, supersample: int = 8) -> np.ndarray:
    """Anti-aliased centered disk: each pixel holds its covered area fraction times `value`"""
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    centers = np.arange(size) - (size - 1) / 2.0
    fine = (centers[:, None] + offsets[None, :]).reshape(-1)
    yy, xx = np.meshgrid(fine, fine, indexing='ij')
    inside = (yy ** 2 + xx ** 2 <= radius ** 2).astype(np.float64)
    return value * inside.reshape(size, supersample, size, supersample).mean(axis=(1, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec() -> PhantomSpec:
    """16 x 32 x 32 chest on the 0.5mm grid (8mm of z)"""
    return PhantomSpec(
        grid_shape=(16, 32, 32),
        pixel_mm=1.0,
        body_semi_axes_mm=(13.0, 15.0),
        lungs=[
            LungSpec(center_mm=(0.0, -1.0, -6.0), semi_axes_mm=(6.0, 8.0, 4.5)),
            LungSpec(center_mm=(0.0, -1.0, 6.0), semi_axes_mm=(6.0, 8.0, 4.5)),
        ],
        vessel_count=2,
        nodules=[NoduleSpec(center_mm=(0.0, -1.0, -6.0), radius_mm=2.5)],
    )


@pytest.fixture
def small_phantom(small_spec):
    return generate_phantom(small_spec, seed=7)


@pytest.fixture
def unit_pair(small_phantom):
    """([0,1] low volume (4, 32, 32), [0,1] reference (8, 32, 32)) from the small phantom"""
    volume, _ = small_phantom
    low = hu_to_unit(slab_average(volume, 4))
    ref = hu_to_unit(slab_average(volume, 2))
    return low, ref


@pytest.fixture
def smooth_hu_volume(rng) -> Volume:
    """32^3 smoothly varying HU volume around soft tissue"""
    from scipy.ndimage import gaussian_filter
    field = gaussian_filter(rng.standard_normal((32, 32, 32)), sigma=3.0, mode='wrap')
    field = 200.0 * field / field.std()
    return Volume(voxels=field, spacing=(1.0, 1.0, 1.0))


@pytest.fixture
def tiny_generator_cfg() -> GeneratorConfig:
    return GeneratorConfig(n_resblocks=1, channels=4)


@pytest.fixture
def tiny_discriminator_cfg() -> DiscriminatorConfig:
    return DiscriminatorConfig(n_downsample_stages=1, base_channels=4)


@pytest.fixture
def tiny_train_cfg() -> TrainConfig:
    return TrainConfig(
        lr_g=1e-4,
        lr_d=1e-4,
        iterations=4,
        batch_size=2,
        patch_dims=(2, 8, 8),
        val_every=2,
        val_patches=2,
        checkpoint_every=2,
        seed=11,
    )


def build_tiny_manifest(output_dir, spec: PhantomSpec, iterations: int = 2) -> ExperimentManifest:
    cases = [CaseSpec(case_id=f"c{k}", seed=k, phantom=spec) for k in range(3)]
    return ExperimentManifest(
        name='tiny',
        seed=3,
        output_dir=str(output_dir),
        cases=cases,
        split=CaseSplit(train=['c0'], val=['c1'], test=['c2']),
        reference=AcquisitionConfig(dose_fraction=1.0, slice_thickness_mm=1.0, n_angles=24),
        scenarios={'B': AcquisitionConfig(dose_fraction=0.25, slice_thickness_mm=2.0, n_angles=24)},
        generator=GeneratorConfig(n_resblocks=1, channels=4),
        discriminator=DiscriminatorConfig(n_downsample_stages=1, base_channels=4),
        train=TrainConfig(
            iterations=iterations,
            batch_size=1,
            patch_dims=(2, 8, 8),
            val_every=1,
            val_patches=1,
            checkpoint_every=1,
        ),
        inference=TileConfig(tile_dims=(4, 32, 32), z_overlap=1, xy_overlap=4),
    )


@pytest.fixture
def tiny_manifest(tmp_path, small_spec) -> ExperimentManifest:
    return build_tiny_manifest(tmp_path / "run", small_spec)
