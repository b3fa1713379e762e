"""SGD and Adam operating in place on named parameter arrays.

Adam follows Kingma & Ba with bias correction::

    m <- b1 m + (1 - b1) g          v <- b2 v + (1 - b2) g^2
    p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, TrainingAborted


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0


def _check_finite(name: str, grad: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(grad)):
        bad = int(np.size(grad) - np.isfinite(grad).sum())
        raise TrainingAborted(f"non-finite gradient for '{name}' at step {step}: {bad} of {grad.size} entries")


class SGD:
    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.velocity: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, g in grads.items():
            _check_finite(name, g, self.t)
        for name, g in grads.items():
            if self.config.momentum:
                v = self.velocity.setdefault(name, np.zeros_like(g))
                v *= self.config.momentum
                v += g
                g = v
            params[name] -= self.config.lr * g


class Adam:
    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, g in grads.items():
            _check_finite(name, g, self.t)
        c = self.config
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            mhat = m / (1 - c.beta1 ** self.t)
            vhat = v / (1 - c.beta2 ** self.t)
            params[name] -= c.lr * mhat / (np.sqrt(vhat) + c.eps)


def make_optimizer(config: OptimizerConfig):
    kinds = {"sgd": SGD, "adam": Adam}
    if config.kind not in kinds:
        raise ConfigurationError(f"unknown optimizer {config.kind!r}; choose from {sorted(kinds)}")
    return kinds[config.kind](config)
