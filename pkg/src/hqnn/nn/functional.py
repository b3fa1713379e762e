from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, WireError


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _check_targets(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    k = logits.shape[-1]
    if k < 2:
        raise ConfigurationError(f"cross-entropy needs at least 2 classes, got {k}")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ConfigurationError(f"{targets.shape} targets for logits of shape {logits.shape}")
    if np.any((targets < 0) | (targets >= k)):
        raise WireError(f"class index outside 0..{k - 1}")
    return targets


def cross_entropy_per_sample(logits: np.ndarray, targets) -> np.ndarray:
    """-log p[target] with p = softmax(logits)."""
    targets = _check_targets(logits, targets)
    return -np.take_along_axis(log_softmax(logits), targets[..., None], axis=-1)[..., 0]


def cross_entropy(logits: np.ndarray, targets) -> float:
    """Mean cross-entropy over the batch."""
    return float(cross_entropy_per_sample(logits, targets).mean())


def cross_entropy_grad(logits: np.ndarray, targets) -> np.ndarray:
    """Gradient of the mean loss w.r.t. the logits: (p - onehot) / N."""
    targets = _check_targets(logits, targets)
    grad = softmax(logits)
    np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1)
    return grad / max(targets.size, 1)
