"""
Classification and adversarial losses with their gradients.
"""

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .config import PROBABILITY_CLAMP
from .errors import LabelError, ShapeError


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, label: int) -> Tuple[float, np.ndarray]:
    """-log softmax(logits)[label] and its gradient softmax - one_hot."""
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 1:
        raise ShapeError(f"logits must be rank 1, got shape {logits.shape}")
    if not 0 <= label < logits.shape[0]:
        raise LabelError(f"label {label} out of range for {logits.shape[0]} classes")
    shifted = logits - logits.max()
    log_z = math.log(float(np.exp(shifted).sum()))
    loss = log_z - float(shifted[label])
    grad = softmax(logits)
    grad[label] -= 1.0
    return loss, grad


@dataclass
class GanLosses:
    """
    Discriminator and generator losses for one step.

    `value` is V(D, G) = E[log D(x)] + E[log(1 - D(G(z)))], the min-max
    objective reported for logging; the generator is trained on the
    non-saturating -log D(G(z)).
    """
    d_loss: float
    g_loss: float
    value: float
    d_grad_real: np.ndarray
    d_grad_fake: np.ndarray
    g_grad_fake: np.ndarray


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=float), PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)


def weighted_gan_bce_losses(d_real: Sequence[float], real_weights: Sequence[float],
                            d_fake: Sequence[float], fake_weights: Sequence[float]) -> GanLosses:
    """
    BCE losses where every discriminator output carries a weight.

    Weights of each side sum to one; with uniform weights this is the
    sample-mean form.
    """
    real, fake = _clamp(d_real).reshape(-1), _clamp(d_fake).reshape(-1)
    wr = np.asarray(real_weights, dtype=float).reshape(-1)
    wf = np.asarray(fake_weights, dtype=float).reshape(-1)
    if wr.shape != real.shape or wf.shape != fake.shape:
        raise ShapeError("each discriminator output needs exactly one weight")

    log_real, log_fake, log_not_fake = np.log(real), np.log(fake), np.log1p(-fake)
    d_loss = -float(wr @ log_real) - float(wf @ log_not_fake)
    g_loss = -float(wf @ log_fake)
    value = float(wr @ log_real) + float(wf @ log_not_fake)
    return GanLosses(
        d_loss=d_loss,
        g_loss=g_loss,
        value=value,
        d_grad_real=-wr / real,
        d_grad_fake=wf / (1.0 - fake),
        g_grad_fake=-wf / fake,
    )


def gan_bce_losses(d_real: Sequence[float], d_fake: Sequence[float]) -> GanLosses:
    """d_loss = -mean log D(x) - mean log(1 - D(G(z))); g_loss = -mean log D(G(z))."""
    n_real, n_fake = len(np.atleast_1d(d_real)), len(np.atleast_1d(d_fake))
    if n_real == 0 or n_fake == 0:
        raise ShapeError("need at least one real and one fake discriminator output")
    return weighted_gan_bce_losses(d_real, np.full(n_real, 1.0 / n_real), d_fake, np.full(n_fake, 1.0 / n_fake))

