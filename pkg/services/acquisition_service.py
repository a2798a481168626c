"""
Acquisition Service - simulated CT scans of a 0.5mm phantom
Slab averaging, parallel-beam forward projection, sinogram-domain dose noise
and windowed filtered back projection, one z-slab at a time.
"""

import logging
import math
from typing import Optional, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.ndimage import map_coordinates
from tqdm import tqdm

from services.config import PhysicsConfig
from services.exceptions import DoseDomainError, ShapeError
from services.schemas.acquisition_schemas import AcquisitionConfig, ReconstructionWindow, reference_acquisition
from utils.volume import Sinogram, Volume

logger = logging.getLogger(__name__)


# ============ HU <-> ATTENUATION ============

def hu_to_attenuation(hu: np.ndarray) -> np.ndarray:
    """mu = mu_water * (1 + HU/1000), negatives clamped to 0"""
    mu = PhysicsConfig.MU_WATER * (1.0 + np.asarray(hu, dtype=np.float64) / 1000.0)
    return np.maximum(mu, 0.0)


def attenuation_to_hu(mu: np.ndarray) -> np.ndarray:
    return 1000.0 * (np.asarray(mu, dtype=np.float64) / PhysicsConfig.MU_WATER - 1.0)


# ============ GEOMETRY ============

def detector_count(image_size: int) -> int:
    """Detectors needed to cover the image diagonal"""
    return int(math.ceil(math.sqrt(2.0) * image_size)) + 1


def image_size_for_detectors(n_detectors: int) -> int:
    """Largest square image whose diagonal `n_detectors` covers"""
    return max(1, int(math.floor((n_detectors - 1) / math.sqrt(2.0))))


def projection_angles(n_angles: int) -> np.ndarray:
    return np.arange(n_angles, dtype=np.float64) * np.pi / n_angles


def _detector_positions(n_detectors: int, detector_spacing: float) -> np.ndarray:
    return (np.arange(n_detectors, dtype=np.float64) - (n_detectors - 1) / 2.0) * detector_spacing


def forward_project(
    image: np.ndarray,
    n_angles: int,
    detector_spacing: Optional[float] = None,
    pixel_mm: float = 1.0,
) -> np.ndarray:
    """
    Parallel-beam line integrals of one attenuation slice.

    Rays are sampled with bilinear interpolation every half voxel and the sum is
    scaled by the step length in mm.

    Args:
        image: Square 2D array of attenuation (1/mm), indexed [y, x]
        n_angles: Projection angles uniformly spanning [0, pi)
        detector_spacing: Detector pitch in mm (defaults to the pixel size)
        pixel_mm: In-plane pixel size in mm

    Returns:
        Array (n_angles, n_detectors)
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ShapeError(f"forward_project needs a square 2D image, got shape {image.shape}")
    if n_angles < 1:
        raise ShapeError(f"n_angles must be >= 1, got {n_angles}")
    detector_spacing = pixel_mm if detector_spacing is None else detector_spacing

    size = image.shape[0]
    n_det = detector_count(size)
    t = _detector_positions(n_det, detector_spacing)
    half_length = 0.5 * max(n_det * detector_spacing, math.sqrt(2.0) * size * pixel_mm)
    step_mm = PhysicsConfig.RAY_STEP_VOXELS * pixel_mm
    n_steps = int(math.ceil(2.0 * half_length / step_mm)) + 1
    s = (np.arange(n_steps) - (n_steps - 1) / 2.0) * step_mm

    center = (size - 1) / 2.0
    sinogram = np.empty((n_angles, n_det), dtype=np.float64)
    for a, theta in enumerate(projection_angles(n_angles)):
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        x = t[:, None] * cos_t - s[None, :] * sin_t
        y = t[:, None] * sin_t + s[None, :] * cos_t
        coords = np.stack([y / pixel_mm + center, x / pixel_mm + center])
        samples = map_coordinates(image, coords, order=1, mode='constant', cval=0.0)
        sinogram[a] = samples.sum(axis=1) * step_mm
    return sinogram


# ============ DOSE NOISE ============

def _slice_rng(seed: int, slice_index: int) -> np.random.Generator:
    """Counter-based stream keyed on (seed, slice); draws run in (angle, detector) order"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(slice_index)])))


def _check_dose(dose_fraction: float) -> None:
    if not (0.0 < dose_fraction <= 1.0):
        raise DoseDomainError(f"dose fraction must lie in (0, 1], got {dose_fraction}")


def dose_noise_variance(p: np.ndarray, dose_fraction: float, photon_fluence: float) -> np.ndarray:
    """Excess variance of a reduced-dose line integral: (1/d - 1) * exp(p) / N0"""
    return (1.0 / dose_fraction - 1.0) * np.exp(np.asarray(p, dtype=np.float64)) / photon_fluence


def inject_dose_noise(
    sinogram: Sinogram,
    dose_fraction: float,
    photon_fluence: float,
    seed: int,
    first_slice: int = 0,
) -> Sinogram:
    """
    Add zero-mean Gaussian noise simulating a reduced dose.

    Args:
        sinogram: Full-dose line integrals
        dose_fraction: d in (0, 1]; d = 1 returns the input unchanged
        photon_fluence: Full-dose counts per ray (N0)
        seed: Noise seed
        first_slice: Global index of the first slice (keys the RNG)

    Raises:
        DoseDomainError: If d is outside (0, 1]
    """
    _check_dose(dose_fraction)
    if photon_fluence <= 0:
        raise DoseDomainError(f"photon fluence must be > 0, got {photon_fluence}")
    if dose_fraction == 1.0:
        return sinogram

    noisy = np.empty(sinogram.data.shape, dtype=np.float32)
    for k in range(sinogram.n_slices):
        p = sinogram.data[k].astype(np.float64)
        sigma = np.sqrt(dose_noise_variance(p, dose_fraction, photon_fluence))
        noise = _slice_rng(seed, first_slice + k).standard_normal(p.shape)
        noisy[k] = p + sigma * noise
    return Sinogram(data=noisy, detector_spacing=sinogram.detector_spacing)


# ============ FILTERED BACK PROJECTION ============

def reconstruction_filter(
    n_detectors: int,
    window: Union[ReconstructionWindow, str] = ReconstructionWindow.HANN,
    detector_spacing: float = 1.0,
) -> np.ndarray:
    """
    Frequency response of the windowed ramp filter on a zero-padded FFT grid.

    The ramp comes from the FFT of the band-limited spatial Ram-Lak kernel, which
    avoids the DC offset of a sampled |f|.
    """
    window = ReconstructionWindow(window)
    n_fft = max(64, 1 << int(math.ceil(math.log2(2 * n_detectors))))
    k = np.rint(np.fft.fftfreq(n_fft) * n_fft).astype(np.int64)
    kernel = np.zeros(n_fft, dtype=np.float64)
    kernel[k == 0] = 0.25
    odd = (k % 2) == 1
    kernel[odd] = -1.0 / (np.pi * k[odd]) ** 2
    response = np.real(np.fft.fft(kernel)) / detector_spacing

    freq = np.fft.fftfreq(n_fft)
    if window is ReconstructionWindow.HANN:
        response *= 0.5 * (1.0 + np.cos(2.0 * np.pi * freq))
    elif window is ReconstructionWindow.SHEPP_LOGAN:
        response *= np.sinc(freq)
    return response


def filter_projections(projections: np.ndarray, window, detector_spacing: float = 1.0) -> np.ndarray:
    n_det = projections.shape[-1]
    response = reconstruction_filter(n_det, window, detector_spacing)
    spectrum = np.fft.fft(projections, n=response.size, axis=-1) * response
    return np.real(np.fft.ifft(spectrum, axis=-1))[..., :n_det]


def back_project(
    projections: np.ndarray,
    image_size: Optional[int] = None,
    detector_spacing: float = 1.0,
    pixel_mm: float = 1.0,
) -> np.ndarray:
    """
    Smear (filtered) projections back over the image grid, scaled by pi / n_angles.

    Args:
        projections: (n_angles, n_detectors)
        image_size: Output side length (defaults to the largest image the detector covers)

    Returns:
        (image_size, image_size) array
    """
    projections = np.asarray(projections, dtype=np.float64)
    if projections.ndim != 2:
        raise ShapeError(f"back_project needs (n_angles, n_detectors), got {projections.shape}")
    n_angles, n_det = projections.shape
    image_size = image_size or image_size_for_detectors(n_det)

    coords = (np.arange(image_size) - (image_size - 1) / 2.0) * pixel_mm
    yy, xx = np.meshgrid(coords, coords, indexing='ij')
    detector_index = np.arange(n_det, dtype=np.float64)
    offset = (n_det - 1) / 2.0

    image = np.zeros((image_size, image_size), dtype=np.float64)
    for a, theta in enumerate(projection_angles(n_angles)):
        t = (xx * math.cos(theta) + yy * math.sin(theta)) / detector_spacing + offset
        image += np.interp(t.ravel(), detector_index, projections[a], left=0.0, right=0.0).reshape(t.shape)
    return image * (np.pi / n_angles)


def fbp_reconstruct(
    projections: np.ndarray,
    window: Union[ReconstructionWindow, str] = ReconstructionWindow.HANN,
    detector_spacing: float = 1.0,
    image_size: Optional[int] = None,
    pixel_mm: float = 1.0,
) -> np.ndarray:
    """
    Filtered back projection of one sinogram slice.

    Returns attenuation (1/mm); `attenuation_to_hu` converts to HU.
    """
    projections = np.asarray(projections, dtype=np.float64)
    if projections.ndim != 2:
        raise ShapeError(f"fbp_reconstruct needs (n_angles, n_detectors), got {projections.shape}")
    filtered = filter_projections(projections, window, detector_spacing)
    return back_project(filtered, image_size, detector_spacing, pixel_mm)


# ============ VOLUME SIMULATION ============

def slab_factor(phantom: Volume, thickness_mm: float) -> int:
    factor = int(round(thickness_mm / phantom.spacing[0]))
    if factor < 1 or not math.isclose(factor * phantom.spacing[0], thickness_mm, rel_tol=1e-4):
        raise ShapeError(f"slice thickness {thickness_mm}mm is not a multiple of {phantom.spacing[0]}mm")
    if phantom.dims[0] % factor:
        raise ShapeError(f"phantom nz={phantom.dims[0]} is not divisible by slab factor {factor}")
    return factor


def slab_average(phantom: Volume, factor: int) -> Volume:
    """Average groups of `factor` consecutive z-layers (attenuation-linear, so safe in HU)"""
    nz, ny, nx = phantom.dims
    if factor < 1 or nz % factor:
        raise ShapeError(f"cannot average nz={nz} in slabs of {factor}")
    slabs = phantom.voxels.reshape(nz // factor, factor, ny, nx).astype(np.float64).mean(axis=1)
    sz, sy, sx = phantom.spacing
    return Volume(voxels=slabs, spacing=(sz * factor, sy, sx))


def acquire_sinogram(phantom: Volume, cfg: AcquisitionConfig, threads: int = 1) -> Sinogram:
    """Slab-average, forward-project and dose-degrade a phantom"""
    nz, ny, nx = phantom.dims
    if ny != nx:
        raise ShapeError(f"in-plane extent must be square, got {ny}x{nx}")
    slabs = slab_average(phantom, slab_factor(phantom, cfg.slice_thickness_mm))
    pixel_mm = phantom.spacing[1]
    mu = hu_to_attenuation(slabs.voxels)

    rows = Parallel(n_jobs=threads, prefer='threads')(
        delayed(forward_project)(mu[k], cfg.n_angles, pixel_mm, pixel_mm)
        for k in tqdm(range(mu.shape[0]), desc='project', leave=False, disable=None)
    )
    clean = Sinogram(data=np.stack(rows), detector_spacing=pixel_mm)
    return inject_dose_noise(clean, cfg.dose_fraction, cfg.photon_fluence, cfg.seed)


def reconstruct_volume(
    sinogram: Sinogram,
    window: Union[ReconstructionWindow, str],
    spacing: tuple,
    image_size: Optional[int] = None,
    threads: int = 1,
) -> Volume:
    """FBP every slice of a sinogram stack and convert to HU"""
    pixel_mm = spacing[1]
    slices = Parallel(n_jobs=threads, prefer='threads')(
        delayed(fbp_reconstruct)(sinogram.data[k], window, sinogram.detector_spacing, image_size, pixel_mm)
        for k in tqdm(range(sinogram.n_slices), desc='reconstruct', leave=False, disable=None)
    )
    return Volume(voxels=attenuation_to_hu(np.stack(slices)), spacing=spacing)


def simulate_acquisition(phantom: Volume, cfg: AcquisitionConfig, threads: int = 1) -> Volume:
    """
    Simulate one acquisition protocol of a 0.5mm phantom.

    Args:
        phantom: HU volume on the fine z grid, square in-plane
        cfg: Dose, slice thickness, fluence, window, angles and seed
        threads: Worker threads for per-slab projection and reconstruction

    Returns:
        HU volume with z spacing equal to the slice thickness

    Raises:
        ShapeError: If nz is not divisible by the slab factor or the slice is not square
    """
    sinogram = acquire_sinogram(phantom, cfg, threads)
    _, sy, sx = phantom.spacing
    volume = reconstruct_volume(
        sinogram, cfg.window, (float(cfg.slice_thickness_mm), sy, sx), phantom.dims[1], threads
    )
    logger.info(
        f"Simulated acquisition dose={cfg.dose_fraction:.0%} thickness={cfg.slice_thickness_mm}mm "
        f"-> {volume.dims}"
    )
    return volume


def simulate_reference(phantom: Volume, seed: int = 0, threads: int = 1) -> Volume:
    """100% dose, 1.0mm reference acquisition"""
    return simulate_acquisition(phantom, reference_acquisition(seed), threads)
