"""
Centralized Configuration for the CT Normalization Pipeline
All configurable values are defined here for easy management
"""

import os
from dotenv import load_dotenv

load_dotenv()


# =============================================================================
# HOUNSFIELD SCALE
# =============================================================================

class HUConfig:
    """Hounsfield window used for [0,1] scaling (full 12-bit CT range)"""
    HU_MIN: float = -1024.0
    HU_MAX: float = 3071.0
    AIR_HU: float = -1000.0
    # Voxels above this count as "inside the body" for patch sampling
    BODY_THRESHOLD_HU: float = -500.0


# =============================================================================
# ACQUISITION PHYSICS
# =============================================================================

class PhysicsConfig:
    """Parallel-beam projection and noise model constants"""
    MU_WATER: float = 0.0195            # 1/mm at the simulated effective energy
    PHANTOM_SLICE_MM: float = 0.5
    RAY_STEP_VOXELS: float = 0.5
    MIN_ANGLES: int = 8


class AcquisitionDefaults:
    """Default acquisition parameters"""
    PHOTON_FLUENCE: float = 1e5
    N_ANGLES: int = 180
    WINDOW: str = 'hann'                # the "medium" kernel
    REFERENCE_DOSE: float = 1.0
    REFERENCE_THICKNESS_MM: float = 1.0
    SCENARIO_THICKNESS_MM: float = 2.0

    # Dose-slice normalization scenarios (all mapped to 100% dose, 1.0mm)
    SCENARIOS = {
        'A': 0.10,
        'B': 0.25,
        'C': 0.50,
    }


# =============================================================================
# MODEL CONFIGURATION
# Desk-scale defaults; the source study trained far larger models on GPU
# =============================================================================

class GeneratorDefaults:
    """EDSR-style generator settings"""
    N_RESBLOCKS: int = 8
    CHANNELS: int = 32
    KERNEL_SIZE: int = 3
    RES_SCALE: float = 0.1
    INPUT_SKIP: bool = True


class DiscriminatorDefaults:
    """Spectrally normalized discriminator settings"""
    N_DOWNSAMPLE_STAGES: int = 3
    BASE_CHANNELS: int = 32
    MAX_CHANNELS: int = 128
    LEAKY_SLOPE: float = 0.2
    POWER_ITERATIONS_PER_STEP: int = 1
    CERTIFY_POWER_ITERATIONS: int = 20


class TrainDefaults:
    """Training hyperparameters"""
    LEARNING_RATE: float = 1e-5
    BETA1: float = 0.5
    BETA2: float = 0.999
    EPSILON: float = 1e-8
    ALPHA_ADV: float = 1.0
    ALPHA_L1: float = 5e-3
    D_G_RATIO: int = 1
    BATCH_SIZE: int = 4
    ITERATIONS: int = 2000
    PATCH_DIMS: tuple = (8, 32, 32)
    BODY_FRACTION: float = 0.25
    SAMPLING_ATTEMPTS_PER_PATCH: int = 1000
    VAL_EVERY: int = 100
    VAL_PATCHES: int = 8
    CHECKPOINT_EVERY: int = 500


class InferenceConfig:
    """Tiled whole-volume inference"""
    Z_OVERLAP: int = 4
    TILE_DIMS: tuple = (16, 64, 64)


# =============================================================================
# METRICS
# =============================================================================

class MetricsConfig:
    """Image quality metric constants"""
    DATA_RANGE: float = 1.0
    SSIM_WINDOW: int = 11
    SSIM_SIGMA: float = 1.5
    SSIM_K1: float = 0.01
    SSIM_K2: float = 0.03
    PERCEPTUAL_SEED: int = 0x4C504950
    PERCEPTUAL_CHANNELS: tuple = (8, 16, 32)
    PERCEPTUAL_SLOPE: float = 0.2
    PERCEPTUAL_MIN_SIZE: int = 32
    METRICS: tuple = ('psnr', 'ssim', 'perceptual')
    PLANES: tuple = ('axial', 'coronal', 'sagittal')


# =============================================================================
# RADIOMICS & STATISTICS
# =============================================================================

class RadiomicsConfig:
    """Radiomic feature extraction and significance testing"""
    BIN_WIDTH_HU: float = 25.0
    ERROR_EPSILON: float = 1e-8
    EXACT_MAX_N: int = 25
    SIGNIFICANCE: float = 0.05
    # ROI extent at the reference (1.0mm) grid; the source study used 30x64x64
    ROI_EXTENT: tuple = (30, 32, 32)
    METHODS: tuple = ('raw', 'cnn', 'gan')
    COMPARISONS: tuple = (('gan', 'raw'), ('gan', 'cnn'), ('cnn', 'raw'))
    FEATURES: tuple = (
        'mean', 'variance', 'skewness', 'kurtosis', 'entropy',
        'contrast', 'correlation', 'joint_energy', 'idm',
    )


# =============================================================================
# RUNTIME / PATHS
# =============================================================================

class RuntimeConfig:
    """Threading, determinism and logging"""
    THREADS: int = int(os.getenv('CTNORM_THREADS', '1'))
    DETERMINISTIC: bool = os.getenv('CTNORM_DETERMINISTIC', 'false').lower() == 'true'
    LOG_LEVEL: str = os.getenv('CTNORM_LOG_LEVEL', 'INFO')


class PathConfig:
    """Output directory layout"""
    OUTPUT_DIR: str = os.getenv('CTNORM_OUTPUT_DIR', 'runs/desk')
    CASES_DIR: str = 'cases'
    MODELS_DIR: str = 'models'
    REPORTS_DIR: str = 'reports'
    PHANTOM_FILE: str = 'phantom.ctv'
    ROI_MANIFEST_FILE: str = 'rois.json'
    VOLUME_FILE: str = 'volume.ctv'
    NORMALIZED_FILE: str = 'normalized.ctv'
    REFERENCE_NAME: str = 'reference'


class ActivityLogConfig:
    """Activity logging settings"""
    FILE_NAME: str = 'activity_log.jsonl'
    DEFAULT_QUERY_LIMIT: int = 1000


# =============================================================================
# HELPER FUNCTIONS
# =============================================================================

def get_runtime_config(threads: int = None, deterministic: bool = None) -> dict:
    """
    Resolve runtime settings, letting explicit arguments win over the environment

    Args:
        threads: Worker thread count override
        deterministic: Force single-threaded execution

    Returns:
        Dict with threads, deterministic, log_level
    """
    deterministic = RuntimeConfig.DETERMINISTIC if deterministic is None else deterministic
    threads = RuntimeConfig.THREADS if threads is None else threads
    if deterministic:
        threads = 1
    return {
        'threads': max(1, int(threads)),
        'deterministic': bool(deterministic),
        'log_level': RuntimeConfig.LOG_LEVEL,
    }
