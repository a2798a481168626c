"""
Adam optimizer over Parameter lists
"""

from typing import Iterable

import numpy as np
from pydantic import BaseModel, Field

from services.config import TrainDefaults
from services.exceptions import TrainingError
from services.neural.parameter import Parameter


class AdamConfig(BaseModel):
    lr: float = Field(TrainDefaults.LEARNING_RATE, gt=0)
    beta1: float = Field(TrainDefaults.BETA1, ge=0, lt=1)
    beta2: float = Field(TrainDefaults.BETA2, ge=0, lt=1)
    epsilon: float = Field(TrainDefaults.EPSILON, gt=0)


def adam_step(params: Iterable[Parameter], cfg: AdamConfig, t: int) -> None:
    """
    Bias-corrected Adam update in place, then zero the gradients.

    Raises:
        TrainingError: If any gradient is non-finite (names the parameter)
    """
    if t < 1:
        raise ValueError(f"Adam step index must be >= 1, got {t}")
    params = list(params)
    for param in params:
        if not np.all(np.isfinite(param.grad)):
            raise TrainingError(f"non-finite gradient in {param.name}", parameter=param.name)

    beta1, beta2 = np.float32(cfg.beta1), np.float32(cfg.beta2)
    correction1 = np.float32(1.0 - cfg.beta1 ** t)
    correction2 = np.float32(1.0 - cfg.beta2 ** t)
    lr, eps = np.float32(cfg.lr), np.float32(cfg.epsilon)
    for param in params:
        g = param.grad
        param.m *= beta1
        param.m += (1 - beta1) * g
        param.v *= beta2
        param.v += (1 - beta2) * g * g
        m_hat = param.m / correction1
        v_hat = param.v / correction2
        param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        param.zero_grad()
