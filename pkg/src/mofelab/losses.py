"""Task losses, the more-vs-fewer ranking hinge and the paired objective.

Scalar functions (``cross_entropy``, ``soft_dice``, ``mofe_loss`` ...) work on
one sample. The ``*_batch`` functions carry the same math over arrays shaped
(N, K, T) and also return gradients with respect to the mixed logits; the
training objective is built from those.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax, logsumexp, softmax

from .dmome import MixtureOutput, ModalityMask
from .errors import ConfigError, InvalidPairError, ShapeError

TASK_LOSSES = ("cross_entropy", "soft_dice", "dice_plus_bce")
RANKINGS = ("mofe", "conf")
DICE_SMOOTH = 1e-5


@dataclass(frozen=True)
class LossSpec:
    task_loss: str = "cross_entropy"
    lam: float = 0.1
    mofe_enabled: bool = True
    # "conf" swaps the loss-level hinge for the max-probability confidence hinge
    ranking: str = "mofe"
    detach_minus: bool = False

    def __post_init__(self):
        if self.task_loss not in TASK_LOSSES:
            raise ConfigError(f"unknown task loss {self.task_loss!r}")
        if self.ranking not in RANKINGS:
            raise ConfigError(f"unknown ranking term {self.ranking!r}")
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ConfigError(f"lambda must be a non-negative real, got {self.lam}")

    @property
    def effective_lambda(self) -> float:
        return float(self.lam) if self.mofe_enabled else 0.0

    @property
    def is_classification(self) -> bool:
        return self.task_loss == "cross_entropy"


@dataclass
class PairLoss:
    loss_plus: float
    loss_minus: float
    mofe: float
    total: float


def cross_entropy(logits, label: int) -> float:
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.size:
        raise IndexError(f"label {label} out of range for {z.size} classes")
    return float(logsumexp(z) - z[label])


def soft_dice(probs, target, smooth: float = DICE_SMOOTH) -> float:
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"probs {p.shape} and target {t.shape} differ in shape")
    return float(1.0 - (2.0 * np.sum(p * t) + smooth) / (np.sum(p) + np.sum(t) + smooth))


def binary_cross_entropy(logits, target) -> float:
    """Mean BCE computed from logits."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, z) - t * z))


def mofe_loss(loss_plus: float, loss_minus: float) -> float:
    return max(0.0, loss_plus - loss_minus)


def max_prob(logits) -> float:
    return float(np.max(softmax(np.asarray(logits, dtype=np.float64))))


def conf_hinge(out_plus: MixtureOutput, out_minus: MixtureOutput) -> float:
    """max(0, Conf(o-) - Conf(o+)) with Conf = max softmax probability, averaged over tasks."""
    zp = np.atleast_2d(out_plus.mixed_logits)
    zm = np.atleast_2d(out_minus.mixed_logits)
    vals = [max(0.0, max_prob(b) - max_prob(a)) for a, b in zip(zp, zm)]
    return float(np.mean(vals))


def _mask_of(out: MixtureOutput) -> ModalityMask:
    return ModalityMask(tuple(o is not None for o in out.expert_logits))


def task_loss(logits, label, kind: str) -> float:
    if kind == "cross_entropy":
        return cross_entropy(logits, int(label))
    if kind == "soft_dice":
        return soft_dice(expit(logits), label)
    return soft_dice(expit(logits), label) + binary_cross_entropy(logits, label)


def total_loss(out_plus: MixtureOutput, out_minus: MixtureOutput, label, spec: LossSpec) -> PairLoss:
    if not _mask_of(out_minus).is_strict_subset_of(_mask_of(out_plus)):
        raise InvalidPairError(f"mask {_mask_of(out_minus).bits} is not a strict subset of "
                               f"{_mask_of(out_plus).bits}")
    zp = np.atleast_2d(out_plus.mixed_logits)
    zm = np.atleast_2d(out_minus.mixed_logits)
    labels = _task_labels(label, zp.shape[0], spec)
    lp = np.array([task_loss(z, y, spec.task_loss) for z, y in zip(zp, labels)])
    lm = np.array([task_loss(z, y, spec.task_loss) for z, y in zip(zm, labels)])
    if spec.ranking == "conf":
        rank = conf_hinge(out_plus, out_minus)
    else:
        rank = float(np.mean([mofe_loss(a, b) for a, b in zip(lp, lm)]))
    loss_plus, loss_minus = float(np.mean(lp)), float(np.mean(lm))
    return PairLoss(loss_plus, loss_minus, rank, loss_plus + loss_minus + spec.effective_lambda * rank)


def _task_labels(label, k: int, spec: LossSpec):
    label = np.asarray(label)
    if k == 1:
        return [label]
    if spec.is_classification:
        return list(label.reshape(k))
    return list(label.reshape(k, -1))


# ---------------------------------------------------------------- batched


def task_loss_batch(mixed: np.ndarray, labels: np.ndarray, kind: str):
    """Per-(sample, task) losses and their gradients wrt ``mixed`` (N, K, T).

    ``labels`` is (N, K) class indices for cross-entropy, or (N, K, T) binary
    maps for the Dice variants.
    """
    if kind == "cross_entropy":
        labels = labels.astype(np.int64)
        logp = log_softmax(mixed, axis=-1)
        loss = -np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
        grad = np.exp(logp)
        np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], -1) - 1.0, -1)
        return loss, grad
    t = labels.astype(np.float64)
    p = expit(mixed)
    a = 2.0 * np.sum(p * t, axis=-1) + DICE_SMOOTH
    b = np.sum(p, axis=-1) + np.sum(t, axis=-1) + DICE_SMOOTH
    loss = 1.0 - a / b
    dp = -(2.0 * t * b[..., None] - a[..., None]) / (b[..., None] ** 2)
    grad = dp * p * (1.0 - p)
    if kind == "dice_plus_bce":
        size = mixed.shape[-1]
        loss = loss + np.mean(np.logaddexp(0.0, mixed) - t * mixed, axis=-1)
        grad = grad + (p - t) / size
    return loss, grad


def confidence_batch(mixed: np.ndarray, kind: str):
    """Per-(sample, task) confidence and its gradient wrt ``mixed``.

    Classification: max softmax probability. Binary maps: mean of max(p, 1-p)
    over elements.
    """
    if kind == "cross_entropy":
        p = softmax(mixed, axis=-1)
        c_idx = np.argmax(p, axis=-1)[..., None]
        conf = np.take_along_axis(p, c_idx, -1)[..., 0]
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, c_idx, 1.0, -1)
        return conf, conf[..., None] * (onehot - p)
    p = expit(mixed)
    sign = np.where(p >= 0.5, 1.0, -1.0)
    conf = np.mean(np.maximum(p, 1.0 - p), axis=-1)
    return conf, sign * p * (1.0 - p) / mixed.shape[-1]


@dataclass
class PairLossBatch:
    loss_plus: np.ndarray  # (N,) task loss averaged over tasks
    loss_minus: np.ndarray
    rank: np.ndarray  # (N,) hinge averaged over tasks
    total: np.ndarray  # (N,)

    @property
    def mean_total(self) -> float:
        return float(np.mean(self.total))


def pair_loss_batch(mixed_plus, mixed_minus, labels, spec: LossSpec):
    """Batch-mean paired objective; returns (PairLossBatch, d/d mixed_plus, d/d mixed_minus)."""
    n, k, _ = mixed_plus.shape
    lp, gp = task_loss_batch(mixed_plus, labels, spec.task_loss)
    lm, gm = task_loss_batch(mixed_minus, labels, spec.task_loss)
    lam = spec.effective_lambda
    scale = 1.0 / (n * k)
    if spec.ranking == "mofe":
        active = lp > lm  # subgradient 0 at the kink
        hinge = np.where(active, lp - lm, 0.0)
        coef_p = (1.0 + lam * active) * scale
        coef_m = (1.0 if spec.detach_minus else (1.0 - lam * active)) * scale
        grad_p = gp * coef_p[..., None]
        grad_m = gm * np.broadcast_to(coef_m, lp.shape)[..., None]
    else:
        cp, dcp = confidence_batch(mixed_plus, spec.task_loss)
        cm, dcm = confidence_batch(mixed_minus, spec.task_loss)
        active = cm > cp
        hinge = np.where(active, cm - cp, 0.0)
        grad_p = (gp - lam * active[..., None] * dcp) * scale
        grad_m = gm * scale
        if not spec.detach_minus:
            grad_m = grad_m + lam * active[..., None] * dcm * scale
    total = np.mean(lp + lm + lam * hinge, axis=1)
    out = PairLossBatch(lp.mean(axis=1), lm.mean(axis=1), hinge.mean(axis=1), total)
    return out, grad_p, grad_m
