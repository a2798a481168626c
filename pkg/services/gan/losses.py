"""
Hinge losses for the discriminator and the generator
"""

from typing import NamedTuple, Optional

import numpy as np

from services.exceptions import ShapeError
from services.neural.ops import l1_loss


class DiscriminatorLoss(NamedTuple):
    loss: float
    d_real: np.ndarray      # dloss/dD(y)
    d_fake: np.ndarray      # dloss/dD(G(x))


class GeneratorLoss(NamedTuple):
    loss: float
    adversarial: float      # -E[D(G(x))]
    l1: float               # mean |G(x) - y|
    d_scores: Optional[np.ndarray]
    d_output: np.ndarray    # dloss/dG(x)


def d_loss(real_scores: np.ndarray, fake_scores: np.ndarray) -> DiscriminatorLoss:
    """
    -V_D = E[max(0, 1 - D(y))] + E[max(0, 1 + D(G(x)))]
    """
    real_scores = np.asarray(real_scores, dtype=np.float64).reshape(-1)
    fake_scores = np.asarray(fake_scores, dtype=np.float64).reshape(-1)
    if real_scores.size == 0 or fake_scores.size == 0:
        raise ShapeError("d_loss needs nonempty score batches")
    loss = np.maximum(0.0, 1.0 - real_scores).mean() + np.maximum(0.0, 1.0 + fake_scores).mean()
    d_real = -(real_scores < 1.0).astype(np.float64) / real_scores.size
    d_fake = (fake_scores > -1.0) / fake_scores.size
    return DiscriminatorLoss(float(loss), d_real.astype(np.float32), d_fake.astype(np.float32))


def g_loss(
    fake_scores: Optional[np.ndarray],
    fake: np.ndarray,
    target: np.ndarray,
    alpha_adv: float,
    alpha_l1: float,
) -> GeneratorLoss:
    """
    V_G = -alpha_adv * E[D(G(x))] + alpha_l1 * mean|G(x) - y|

    `fake_scores` may be None when alpha_adv is 0 (L1-only baseline).
    """
    l1, d_l1 = l1_loss(fake, target)
    if fake_scores is None:
        if alpha_adv != 0:
            raise ShapeError("g_loss needs discriminator scores when alpha_adv > 0")
        adversarial, d_scores = 0.0, None
    else:
        scores = np.asarray(fake_scores, dtype=np.float64).reshape(-1)
        if scores.size == 0:
            raise ShapeError("g_loss needs a nonempty score batch")
        adversarial = float(-scores.mean())
        d_scores = np.full(scores.shape, -alpha_adv / scores.size, dtype=np.float32)
    loss = alpha_adv * adversarial + alpha_l1 * l1
    return GeneratorLoss(float(loss), adversarial, l1, d_scores, (alpha_l1 * d_l1).astype(fake.dtype))
