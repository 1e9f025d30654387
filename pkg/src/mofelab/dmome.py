"""Dynamic mixture of modality experts.

One expert per modality maps that modality's features to ``T`` logits. A
gate sees all modalities (missing ones zero-filled) and emits an ``M x K``
logit matrix; a softmax restricted to the present modalities turns each
column into mixing weights, so missing experts get weight exactly 0 and
are never evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, MaskError, NumericError, ShapeError
from .nn import GradientSet, Mlp, mlp_backward, mlp_forward_batch, mlp_init

GATE_INPUTS = ("raw", "expert_features")


@dataclass(frozen=True)
class ModalityMask:
    present: tuple

    def __post_init__(self):
        bits = tuple(bool(b) for b in self.present)
        if not bits:
            raise MaskError("mask must cover at least one modality")
        if not any(bits):
            raise MaskError("all-absent mask is not allowed")
        object.__setattr__(self, "present", bits)

    @classmethod
    def from_bits(cls, bits: str) -> "ModalityMask":
        if not bits or set(bits) - {"0", "1"}:
            raise MaskError(f"bad mask bitstring {bits!r}")
        return cls(tuple(c == "1" for c in bits))

    @classmethod
    def full(cls, m: int) -> "ModalityMask":
        return cls((True,) * m)

    @classmethod
    def only(cls, m: int, index: int) -> "ModalityMask":
        return cls(tuple(i == index for i in range(m)))

    def __len__(self):
        return len(self.present)

    def __getitem__(self, i):
        return self.present[i]

    def __iter__(self):
        return iter(self.present)

    @property
    def bits(self) -> str:
        return "".join("1" if b else "0" for b in self.present)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.present, dtype=bool)

    @property
    def count(self) -> int:
        return sum(self.present)

    def indices(self) -> List[int]:
        return [i for i, b in enumerate(self.present) if b]

    def is_strict_subset_of(self, other: "ModalityMask") -> bool:
        if len(self) != len(other):
            return False
        return all(o or not s for s, o in zip(self.present, other.present)) and self.present != other.present

    def __repr__(self):
        return f"ModalityMask({self.bits})"


def as_mask(mask, m: Optional[int] = None) -> ModalityMask:
    if not isinstance(mask, ModalityMask):
        mask = ModalityMask.from_bits(mask) if isinstance(mask, str) else ModalityMask(tuple(mask))
    if m is not None and len(mask) != m:
        raise MaskError(f"mask {mask.bits} has {len(mask)} entries, model has {m} modalities")
    return mask


def _features(sample) -> List[np.ndarray]:
    feats = getattr(sample, "features", sample)
    return [np.asarray(x, dtype=np.float64) for x in feats]


def zero_fill_concat(sample, mask, dims: Optional[Sequence[int]] = None) -> np.ndarray:
    feats = _features(sample)
    mask = as_mask(mask, len(feats))
    if dims is not None and [f.size for f in feats] != list(dims):
        raise ShapeError(f"sample dims {[f.size for f in feats]} do not match {list(dims)}")
    return np.concatenate([f if p else np.zeros(f.size) for f, p in zip(feats, mask)])


@dataclass
class GatingWeights:
    weights: np.ndarray  # (M, K)
    source_logits: np.ndarray  # (M, K), pre-masking gate outputs


def masked_softmax(logits: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Softmax over axis 1 of ``logits`` (N, M, K) restricted to ``masks`` (N, M).

    Absent entries come out as exact zeros; no infinities are formed.
    """
    present = masks[:, :, None]
    # max over present entries only; the column min is a safe filler
    filler = logits.min(axis=1, keepdims=True)
    shifted = np.where(present, logits, filler).max(axis=1, keepdims=True)
    e = np.where(present, np.exp(np.where(present, logits - shifted, 0.0)), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def masked_gate_weights(gate_logits, mask) -> GatingWeights:
    g = np.asarray(gate_logits, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None]
    if g.ndim != 2:
        raise ShapeError(f"gate logits must be M or M x K, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gate logits")
    mask = as_mask(mask, g.shape[0])
    w = masked_softmax(g[None], mask.array[None])[0]
    return GatingWeights(w, g.copy())


@dataclass
class MixtureOutput:
    expert_logits: List[Optional[np.ndarray]]
    gating: GatingWeights
    mixed_logits: np.ndarray  # (T,) for one task, (K, T) otherwise


@dataclass
class DmomeModel:
    experts: List[Mlp]
    gate: Mlp
    modality_dims: List[int]
    task_count: int = 1
    gate_input: str = "raw"
    gate_sees_mask: bool = False
    static_weights: bool = False

    def __post_init__(self):
        if len(self.experts) < 2:
            raise ConfigError("a mixture needs at least two modality experts")
        if len(self.experts) != len(self.modality_dims):
            raise ConfigError("expert count does not match modality count")
        if self.gate_input not in GATE_INPUTS:
            raise ConfigError(f"gate_input must be one of {GATE_INPUTS}, got {self.gate_input!r}")
        t = self.experts[0].out_dim
        for m, (e, d) in enumerate(zip(self.experts, self.modality_dims)):
            if e.in_dim != d or e.out_dim != t:
                raise ShapeError(f"expert {m} has dims {e.dims}, expected {d} -> {t}")
        if self.gate.in_dim != gate_in_dim(self.modality_dims, t, self.gate_input, self.gate_sees_mask):
            raise ShapeError(f"gate input dim {self.gate.in_dim} inconsistent with gate options")
        if self.gate.out_dim != self.n_modalities * self.task_count:
            raise ShapeError(f"gate output dim {self.gate.out_dim} != M*K = "
                             f"{self.n_modalities * self.task_count}")

    @property
    def n_modalities(self) -> int:
        return len(self.experts)

    @property
    def output_dim(self) -> int:
        return self.experts[0].out_dim

    def models(self) -> Dict[str, Mlp]:
        named = {f"expert_{m}": e for m, e in enumerate(self.experts)}
        named["gate"] = self.gate
        return named

    def replace(self, named: Dict[str, Mlp]) -> "DmomeModel":
        experts = [named.get(f"expert_{m}", e) for m, e in enumerate(self.experts)]
        return DmomeModel(experts, named.get("gate", self.gate), list(self.modality_dims),
                          self.task_count, self.gate_input, self.gate_sees_mask, self.static_weights)

    def metadata(self) -> dict:
        return {
            "M": self.n_modalities, "K": self.task_count, "T": self.output_dim,
            "modality_dims": list(self.modality_dims), "gate_input": self.gate_input,
            "gate_sees_mask": self.gate_sees_mask, "static_weights": self.static_weights,
        }


def gate_in_dim(modality_dims, output_dim, gate_input="raw", sees_mask=False) -> int:
    base = sum(modality_dims) if gate_input == "raw" else len(modality_dims) * output_dim
    return base + (len(modality_dims) if sees_mask else 0)


def dmome_init(modality_dims: Sequence[int], output_dim: int, *, task_count: int = 1,
               expert_hidden: Sequence[int] = (16,), gate_hidden: Sequence[int] = (16,),
               gate_input: str = "raw", gate_sees_mask: bool = False,
               static_weights: bool = False, seed: int = 0) -> DmomeModel:
    seeds = np.random.SeedSequence(seed).generate_state(len(modality_dims) + 1)
    experts = [mlp_init([d, *expert_hidden, output_dim], int(s)) for d, s in zip(modality_dims, seeds)]
    g_in = gate_in_dim(modality_dims, output_dim, gate_input, gate_sees_mask)
    gate = mlp_init([g_in, *gate_hidden, len(modality_dims) * task_count], int(seeds[-1]))
    return DmomeModel(experts, gate, list(modality_dims), task_count, gate_input,
                      gate_sees_mask, static_weights)


@dataclass
class BatchForward:
    masks: np.ndarray  # (N, M) bool
    expert_logits: np.ndarray  # (N, M, T); rows of absent experts are 0 and unused
    gate_logits: np.ndarray  # (N, M, K)
    weights: np.ndarray  # (N, M, K)
    mixed: np.ndarray  # (N, K, T)
    expert_caches: Dict[int, tuple] = field(default_factory=dict)
    gate_cache: object = None


def _stack_inputs(model: DmomeModel, xs: Sequence[np.ndarray]) -> List[np.ndarray]:
    if len(xs) != model.n_modalities:
        raise ShapeError(f"expected {model.n_modalities} modality arrays, got {len(xs)}")
    out = []
    for m, (x, d) in enumerate(zip(xs, model.modality_dims)):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != d:
            raise ShapeError(f"modality {m}: expected (N, {d}), got {x.shape}")
        out.append(x)
    return out


def forward_batch(model: DmomeModel, xs: Sequence[np.ndarray], masks) -> BatchForward:
    """Evaluate the mixture for N samples, each under its own mask.

    ``xs`` holds one (N, d_m) array per modality, ``masks`` is (N, M) bool.
    """
    xs = _stack_inputs(model, xs)
    n = xs[0].shape[0]
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim == 1:
        masks = np.broadcast_to(masks, (n, masks.size))
    if masks.shape != (n, model.n_modalities):
        raise MaskError(f"masks must be (N, {model.n_modalities}), got {masks.shape}")
    if not masks.any(axis=1).all():
        raise MaskError("all-absent mask is not allowed")

    m_count, t, k = model.n_modalities, model.output_dim, model.task_count
    logits = np.zeros((n, m_count, t))
    caches = {}
    for m, expert in enumerate(model.experts):
        rows = np.flatnonzero(masks[:, m])
        if rows.size == 0:
            continue
        out, cache = mlp_forward_batch(expert, xs[m][rows], name=f"expert_{m}")
        logits[rows, m] = out
        caches[m] = (rows, cache)

    gate_cache = None
    if model.static_weights:
        gate_logits = np.zeros((n, m_count, k))
        weights = np.repeat((masks / masks.sum(axis=1, keepdims=True))[:, :, None], k, axis=2)
    else:
        gate_x = _gate_input(model, xs, masks, logits)
        g, gate_cache = mlp_forward_batch(model.gate, gate_x, name="gate")
        gate_logits = g.reshape(n, m_count, k)
        weights = masked_softmax(gate_logits, masks)
    mixed = np.einsum("nmk,nmt->nkt", weights, logits)
    return BatchForward(masks, logits, gate_logits, weights, mixed, caches, gate_cache)


def _gate_input(model, xs, masks, expert_logits):
    if model.gate_input == "raw":
        parts = [np.where(masks[:, m:m + 1], x, 0.0) for m, x in enumerate(xs)]
    else:
        parts = [expert_logits.reshape(len(masks), -1)]
    if model.gate_sees_mask:
        parts.append(masks.astype(np.float64))
    return np.concatenate(parts, axis=1)


def backward_batch(model: DmomeModel, fwd: BatchForward, grad_mixed: np.ndarray) -> Dict[str, GradientSet]:
    """Gradients of a scalar loss given d loss / d mixed logits, shape (N, K, T)."""
    grad_logits = np.einsum("nmk,nkt->nmt", fwd.weights, grad_mixed)
    grads: Dict[str, GradientSet] = {}
    if model.static_weights:
        grads["gate"] = GradientSet.zeros_like(model.gate)
    else:
        grad_w = np.einsum("nkt,nmt->nmk", grad_mixed, fwd.expert_logits)
        w = fwd.weights
        grad_g = w * (grad_w - (w * grad_w).sum(axis=1, keepdims=True))
        n = grad_g.shape[0]
        need_x = model.gate_input == "expert_features"
        grads["gate"], grad_gate_x = mlp_backward(model.gate, fwd.gate_cache, grad_g.reshape(n, -1), need_x)
        if need_x:
            m_count, t = model.n_modalities, model.output_dim
            grad_logits = grad_logits + grad_gate_x[:, :m_count * t].reshape(n, m_count, t)
    for m, expert in enumerate(model.experts):
        if m not in fwd.expert_caches:
            grads[f"expert_{m}"] = GradientSet.zeros_like(expert)
            continue
        rows, cache = fwd.expert_caches[m]
        grads[f"expert_{m}"], _ = mlp_backward(expert, cache, grad_logits[rows, m])
    return grads


def dmome_forward(model: DmomeModel, sample, mask) -> MixtureOutput:
    feats = _features(sample)
    mask = as_mask(mask, model.n_modalities)
    if [f.size for f in feats] != list(model.modality_dims):
        raise ShapeError(f"sample dims {[f.size for f in feats]} do not match {model.modality_dims}")
    # masked modalities are replaced before anything touches them
    xs = [(f if p else np.zeros(f.size))[None, :] for f, p in zip(feats, mask)]
    fwd = forward_batch(model, xs, mask.array[None, :])
    experts = [fwd.expert_logits[0, m].copy() if p else None for m, p in enumerate(mask)]
    gating = GatingWeights(fwd.weights[0], fwd.gate_logits[0])
    mixed = fwd.mixed[0, 0] if model.task_count == 1 else fwd.mixed[0]
    return MixtureOutput(experts, gating, mixed)
