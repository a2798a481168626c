"""
Generator and discriminator of the normalization GAN
"""

import logging
from typing import List

import numpy as np

from services.exceptions import ConfigError, ShapeError
from services.neural.layers import (
    Conv3d,
    GlobalAvgPool,
    LeakyReLU,
    Linear,
    Module,
    ResBlock,
    Sequential,
    ZUpShuffle,
)
from services.schemas.gan_schemas import DiscriminatorConfig, GeneratorConfig

logger = logging.getLogger(__name__)


class Generator(Module):
    """
    EDSR-style z-upsampler: (N, 1, D, H, W) -> (N, 1, 2D, H, W).

    head -> residual body (+ head skip) -> tail to 2C channels -> z_upshuffle -> out.
    With `input_skip` the output conv starts at zero and the prediction is added to
    the z-repeated input, so an untrained generator is a nearest-neighbour upsampler.
    """

    def __init__(self, cfg: GeneratorConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        c, k = cfg.channels, cfg.kernel_size
        pad = k // 2
        self.cfg = cfg
        self.head = Conv3d('head', 1, c, k, 1, pad, rng=rng)
        self.body = Sequential(*(
            ResBlock(f"body.{i}", c, k, cfg.res_scale, rng=rng) for i in range(cfg.n_resblocks)
        ))
        self.tail = Conv3d('tail', c, 2 * c, k, 1, pad, rng=rng)
        self.upshuffle = ZUpShuffle()
        self.out = Conv3d('out', c, 1, k, 1, pad, rng=rng)
        if cfg.input_skip:
            self.out.weight.value[...] = 0.0

    def children(self) -> List[Module]:
        return [self.head, self.body, self.tail, self.upshuffle, self.out]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 5 or x.shape[1] != 1:
            raise ShapeError(f"generator expects (N, 1, D, H, W), got {x.shape}")
        h = self.head.forward(x)
        r = self.body.forward(h) + h
        y = self.out.forward(self.upshuffle.forward(self.tail.forward(r)))
        if self.cfg.input_skip:
            y = y + np.repeat(x, 2, axis=2)
        return y

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dr = self.tail.backward(self.upshuffle.backward(self.out.backward(dout)))
        dh = self.body.backward(dr) + dr
        dx = self.head.backward(dh)
        if self.cfg.input_skip:
            n, c, d2, h, w = dout.shape
            dx = dx + dout.reshape(n, c, d2 // 2, 2, h, w).sum(axis=3)
        return dx


class Discriminator(Module):
    """Stride-2 spectral convs with LeakyReLU, global average pool, spectral linear scalar head"""

    def __init__(self, cfg: DiscriminatorConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        layers = []
        in_channels = 1
        for i in range(cfg.n_downsample_stages):
            out_channels = min(cfg.base_channels * 2 ** i, cfg.max_channels)
            layers.append(Conv3d(f"stage{i}", in_channels, out_channels, 3, 2, 1, rng=rng, spectral=True))
            layers.append(LeakyReLU(cfg.leaky_slope))
            in_channels = out_channels
        self.features = Sequential(*layers)
        self.pool = GlobalAvgPool()
        self.head = Linear('score', in_channels, 1, rng=rng, spectral=True)

    def children(self) -> List[Module]:
        return [self.features, self.pool, self.head]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Returns one unbounded score per batch element, shape (N,)"""
        return self.head.forward(self.pool.forward(self.features.forward(x)))[:, 0]

    def backward(self, dscores: np.ndarray) -> np.ndarray:
        dpool = self.head.backward(dscores.reshape(-1, 1).astype(np.float32))
        return self.features.backward(self.pool.backward(dpool))


def build_generator(cfg: GeneratorConfig, seed: int = 0) -> Generator:
    """
    Raises:
        ConfigError: If the configuration cannot build a generator
    """
    if cfg.n_resblocks < 1:
        raise ConfigError(f"generator needs n_resblocks >= 1, got {cfg.n_resblocks}")
    if cfg.z_upsample_factor != 2:
        raise ConfigError(f"z_upsample_factor is fixed at 2, got {cfg.z_upsample_factor}")
    model = Generator(cfg, seed)
    logger.debug(f"Built generator: {cfg.n_resblocks} blocks x {cfg.channels} channels, seed={seed}")
    return model


def build_discriminator(cfg: DiscriminatorConfig, seed: int = 0) -> Discriminator:
    """
    Raises:
        ConfigError: If the configuration has no downsampling stage
    """
    if cfg.n_downsample_stages < 1:
        raise ConfigError(f"discriminator needs n_downsample_stages >= 1, got {cfg.n_downsample_stages}")
    return Discriminator(cfg, seed)
