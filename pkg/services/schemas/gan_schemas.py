"""
Pydantic schemas for the normalization networks, training and tiled inference
"""

from typing import Literal, Tuple

from pydantic import BaseModel, Field, field_validator

from services.config import (
    DiscriminatorDefaults,
    GeneratorDefaults,
    InferenceConfig,
    TrainDefaults,
)


class GeneratorConfig(BaseModel):
    """EDSR-style generator: head, residual body, z-upsampling tail"""
    n_resblocks: int = Field(GeneratorDefaults.N_RESBLOCKS, description="Residual blocks in the body (>= 1)")
    channels: int = Field(GeneratorDefaults.CHANNELS, ge=1)
    z_upsample_factor: Literal[2] = 2
    kernel_size: int = Field(GeneratorDefaults.KERNEL_SIZE, ge=1)
    res_scale: float = Field(GeneratorDefaults.RES_SCALE, gt=0)
    input_skip: bool = Field(GeneratorDefaults.INPUT_SKIP, description="Add z-repeated input to the output")

    @field_validator('kernel_size')
    @classmethod
    def check_odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"kernel_size must be odd for same-size padding, got {value}")
        return value


class DiscriminatorConfig(BaseModel):
    """Spectrally normalized patch discriminator with a scalar hinge head"""
    n_downsample_stages: int = Field(DiscriminatorDefaults.N_DOWNSAMPLE_STAGES, description="Stride-2 conv stages (>= 1)")
    base_channels: int = Field(DiscriminatorDefaults.BASE_CHANNELS, ge=1)
    max_channels: int = Field(DiscriminatorDefaults.MAX_CHANNELS, ge=1)
    leaky_slope: float = Field(DiscriminatorDefaults.LEAKY_SLOPE, ge=0, lt=1)
    power_iterations: int = Field(DiscriminatorDefaults.POWER_ITERATIONS_PER_STEP, ge=1)


class TrainConfig(BaseModel):
    """Hinge-GAN training hyperparameters (alpha_adv = 0 gives the L1-only CNN baseline)"""
    lr_g: float = Field(TrainDefaults.LEARNING_RATE, gt=0)
    lr_d: float = Field(TrainDefaults.LEARNING_RATE, gt=0)
    beta1: float = Field(TrainDefaults.BETA1, ge=0, lt=1)
    beta2: float = Field(TrainDefaults.BETA2, ge=0, lt=1)
    epsilon: float = Field(TrainDefaults.EPSILON, gt=0)
    alpha_adv: float = Field(TrainDefaults.ALPHA_ADV, ge=0, description="alpha1, adversarial weight")
    alpha_l1: float = Field(TrainDefaults.ALPHA_L1, ge=0, description="alpha2, L1 content weight")
    d_g_ratio: int = Field(TrainDefaults.D_G_RATIO, ge=1, description="G steps per D step")
    batch_size: int = Field(TrainDefaults.BATCH_SIZE, ge=1)
    iterations: int = Field(TrainDefaults.ITERATIONS, ge=0)
    patch_dims: Tuple[int, int, int] = Field(TrainDefaults.PATCH_DIMS, description="Input patch (D, H, W)")
    seed: int = Field(0, ge=0)
    body_fraction: float = Field(TrainDefaults.BODY_FRACTION, ge=0, le=1)
    val_every: int = Field(TrainDefaults.VAL_EVERY, ge=1)
    val_patches: int = Field(TrainDefaults.VAL_PATCHES, ge=1)
    checkpoint_every: int = Field(TrainDefaults.CHECKPOINT_EVERY, ge=1)

    @field_validator('patch_dims')
    @classmethod
    def check_patch_dims(cls, value: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(v < 1 for v in value):
            raise ValueError(f"patch_dims must be positive, got {value}")
        return value

    @property
    def is_baseline(self) -> bool:
        return self.alpha_adv == 0


class TileConfig(BaseModel):
    """Whole-volume inference tiling, dims in input voxels"""
    tile_dims: Tuple[int, int, int] = InferenceConfig.TILE_DIMS
    z_overlap: int = Field(InferenceConfig.Z_OVERLAP, ge=0)
    xy_overlap: int = Field(InferenceConfig.Z_OVERLAP, ge=0)

    @field_validator('tile_dims')
    @classmethod
    def check_tile_dims(cls, value: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(v < 1 for v in value):
            raise ValueError(f"tile_dims must be positive, got {value}")
        return value
