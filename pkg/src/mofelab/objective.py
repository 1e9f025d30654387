"""The paired training objective over a whole mixture, with exact gradients.

A :class:`Batch` fixes everything random about one optimization step (the
samples and both masks per sample), so the objective is a deterministic
function of the parameters and can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from .dmome import DmomeModel, backward_batch, forward_batch
from .errors import InvalidPairError, NumericError, ShapeError
from .losses import LossSpec, PairLossBatch, pair_loss_batch
from .nn import GradientSet, central_difference


@dataclass
class Batch:
    xs: Sequence[np.ndarray]
    labels: np.ndarray
    masks_plus: np.ndarray  # (N, M) bool
    masks_minus: np.ndarray
    spec: LossSpec

    def __post_init__(self):
        self.masks_plus = np.asarray(self.masks_plus, dtype=bool)
        self.masks_minus = np.asarray(self.masks_minus, dtype=bool)
        if len(self.labels) == 0:
            raise ShapeError("empty batch")
        if self.masks_plus.shape != self.masks_minus.shape or self.masks_plus.shape[0] != len(self.labels):
            raise ShapeError("mask arrays must both be (N, M)")
        outside = (self.masks_minus & ~self.masks_plus).any(axis=1)
        equal = (self.masks_minus == self.masks_plus).all(axis=1)
        empty = ~self.masks_minus.any(axis=1)
        if (outside | equal | empty).any():
            bad = int(np.flatnonzero(outside | equal | empty)[0])
            raise InvalidPairError(f"sample {bad}: minus mask is not a non-empty strict subset of plus")


def task_labels(labels: np.ndarray, k: int, classification: bool) -> np.ndarray:
    """Normalize labels to (N, K) class indices or (N, K, P) maps."""
    labels = np.asarray(labels)
    want = 2 if classification else 3
    if labels.ndim == want - 1:
        labels = np.repeat(labels[:, None], k, axis=1) if k > 1 else labels[:, None]
    if labels.ndim != want or labels.shape[1] != k:
        raise ShapeError(f"labels of shape {labels.shape} do not fit {k} task(s)")
    return labels


@dataclass
class ObjectiveResult:
    loss: float
    grads: Dict[str, GradientSet]
    parts: PairLossBatch


def objective(model: DmomeModel, batch: Batch, with_grad: bool = True) -> ObjectiveResult:
    labels = task_labels(batch.labels, model.task_count, batch.spec.is_classification)
    fwd_p = forward_batch(model, batch.xs, batch.masks_plus)
    fwd_m = forward_batch(model, batch.xs, batch.masks_minus)
    parts, g_p, g_m = pair_loss_batch(fwd_p.mixed, fwd_m.mixed, labels, batch.spec)
    loss = parts.mean_total
    if not np.isfinite(loss):
        raise NumericError("non-finite objective value")
    grads = {}
    if with_grad:
        grads = backward_batch(model, fwd_p, g_p)
        for name, g in backward_batch(model, fwd_m, g_m).items():
            grads[name] += g
    return ObjectiveResult(loss, grads, parts)


def loss_and_grad(model: DmomeModel, batch: Batch) -> Tuple[float, Dict[str, GradientSet]]:
    res = objective(model, batch)
    return res.loss, res.grads


def loss_only(model: DmomeModel, batch: Batch) -> float:
    return objective(model, batch, with_grad=False).loss


def finite_diff_grad(model: DmomeModel, batch: Batch, step: float = 1e-5) -> Dict[str, GradientSet]:
    """Central-difference estimate of every parameter's gradient."""
    if not step > 0:
        raise ValueError(f"finite-difference step must be positive, got {step}")
    out = {}
    for name, net in model.models().items():
        def f(theta, name=name, net=net):
            return loss_only(model.replace({name: net.with_flat(theta)}), batch)
        flat = central_difference(f, net.flat(), step)
        fake = net.with_flat(flat)
        out[name] = GradientSet(fake.weights, fake.biases)
    return out


def gradient_error(analytic: Dict[str, GradientSet], numeric: Dict[str, GradientSet], model: DmomeModel,
                   floor: float = 1e-4):
    """Largest |a - f| / max(|a|, |f|, floor) over all parameters, with its path.

    The floor makes differences below ``1e-4 * floor`` count as agreement when
    both values are tiny.
    """
    worst, where = 0.0, None
    for name, net in model.models().items():
        a, f = analytic[name].flat(), numeric[name].flat()
        err = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        i = int(np.argmax(err))
        if err[i] > worst or where is None:
            worst, where = float(err[i]), f"{name}.{net.param_paths()[i]}"
    return worst, where
