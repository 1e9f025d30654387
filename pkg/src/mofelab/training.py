"""Two-stage training and read-only evaluation.

Stage 1 fits every expert on its own modality with the plain task loss.
Stage 2 co-trains experts and gate on the paired objective: each sample gets
its own (more, fewer) mask pair per step, both branches are run through the
mixture and all parameters receive gradients from both.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, softmax

from .data import Dataset
from .dmome import DmomeModel, ModalityMask, as_mask, dmome_init, forward_batch
from .errors import ConfigError, EmptyInputError, NumericError
from .losses import LossSpec, task_loss_batch
from .metrics import (DEFAULT_BINS, EvaluationReport, MaskRow, PredictionRecord,
                      counterintuitive_rate_matrix, ece_arrays, sce_arrays)
from .nn import AdamState, Mlp, adam_step, mlp_backward, mlp_forward_batch, mlp_init
from .objective import Batch, objective
from .sampling import PairStrategy, enumerate_masks, sample_mask_pairs

SCORE_MODES = ("correct", "true_class_prob")


@dataclass(frozen=True)
class TrainConfig:
    stage1_epochs: int = 30
    stage2_epochs: int = 30
    batch_size: int = 32
    lr_stage1: float = 1e-2
    lr_stage2: Optional[float] = None  # None: same as stage 1
    loss: LossSpec = field(default_factory=LossSpec)
    pair_mode: str = "full_vs_sub"
    seed: int = 0
    expert_hidden: Tuple[int, ...] = (16,)
    gate_hidden: Tuple[int, ...] = (16,)
    gate_input: str = "raw"
    gate_sees_mask: bool = False
    freeze_experts: bool = False
    static_weights: bool = False
    pretrain_experts: bool = True

    def __post_init__(self):
        if self.stage1_epochs < 1 or self.stage2_epochs < 1:
            raise ConfigError("epoch counts must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        for lr in (self.lr_stage1, self.stage2_lr):
            if not lr > 0:
                raise ConfigError(f"learning rates must be positive, got {lr}")
        PairStrategy(self.pair_mode)

    @property
    def stage2_lr(self) -> float:
        return self.lr_stage1 if self.lr_stage2 is None else self.lr_stage2

    @property
    def pair_strategy(self) -> PairStrategy:
        return PairStrategy(self.pair_mode, self.seed)


@dataclass
class TrainRecord:
    epoch: int
    stage: int
    loss_plus: float
    loss_minus: float
    mofe: float  # lambda-weighted ranking term, as it enters the total
    hinge: float  # raw ranking hinge before weighting
    total: float
    val_acc: Dict[str, float]


@dataclass
class TrainLog:
    records: List[TrainRecord] = field(default_factory=list)

    HEADER = ("epoch", "stage", "loss_plus", "loss_minus", "mofe", "hinge", "total")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        panel = list(self.records[0].val_acc) if self.records else []
        w.writerow(list(self.HEADER) + [f"val_acc_{b}" for b in panel])
        for r in self.records:
            w.writerow([r.epoch, r.stage] + [f"{v:.10g}" for v in (r.loss_plus, r.loss_minus, r.mofe,
                                                                  r.hinge, r.total)]
                       + [f"{r.val_acc[b]:.6f}" for b in panel])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def _class_or_map_labels(dataset: Dataset, loss: LossSpec) -> np.ndarray:
    if dataset.is_segmentation == loss.is_classification:
        raise ConfigError(f"task loss {loss.task_loss!r} does not fit a "
                          f"{'segmentation' if dataset.is_segmentation else 'classification'} dataset")
    return dataset.labels


def _expert_epochs(m: int, dataset: Dataset, config: TrainConfig):
    """Yield (expert, mean train loss) after each stage-1 epoch. Reads only modality ``m``."""
    if len(dataset) == 0:
        raise EmptyInputError("empty dataset")
    x = dataset.xs[m]
    labels = _class_or_map_labels(dataset, config.loss)[:, None]
    expert = mlp_init([x.shape[1], *config.expert_hidden, dataset.output_dim], _expert_seed(config.seed, m))
    state = AdamState.fresh(expert, lr=config.lr_stage1)
    rng = _rng(config.seed, 1, m)
    for epoch in range(config.stage1_epochs):
        total = 0.0
        for idx in _batches(len(x), config.batch_size, rng):
            out, cache = mlp_forward_batch(expert, x[idx], name=f"expert_{m}")
            loss, grad = task_loss_batch(out[:, None, :], labels[idx], config.loss.task_loss)
            if not np.all(np.isfinite(loss)):
                raise NumericError(f"non-finite loss in stage 1, expert {m}, epoch {epoch}")
            total += float(loss.sum())
            grads, _ = mlp_backward(expert, cache, grad[:, 0, :] / len(idx))
            expert, state = adam_step(expert, grads, state)
        yield expert, total / len(x)


def _expert_seed(seed: int, m: int) -> int:
    return int(np.random.SeedSequence([seed, 0, m]).generate_state(1)[0])


def train_stage1(expert_index: int, dataset: Dataset, config: TrainConfig) -> Mlp:
    expert = None
    for expert, _ in _expert_epochs(expert_index, dataset, config):
        pass
    return expert


def initial_model(dataset: Dataset, config: TrainConfig, task_count: int = 1) -> DmomeModel:
    """Randomly initialized mixture sized for ``dataset``."""
    return dmome_init(dataset.dims, dataset.output_dim, task_count=task_count,
                      expert_hidden=config.expert_hidden, gate_hidden=config.gate_hidden,
                      gate_input=config.gate_input, gate_sees_mask=config.gate_sees_mask,
                      static_weights=config.static_weights, seed=config.seed)


def val_panel(m: int) -> List[ModalityMask]:
    return [ModalityMask.full(m)] + [ModalityMask.only(m, i) for i in range(m)]


def _panel_accuracy(model: DmomeModel, data: Optional[Dataset]) -> Dict[str, float]:
    if data is None:
        return {}
    return {mk.bits: evaluate(model, data, [mk]).per_mask[mk].mean_score for mk in val_panel(model.n_modalities)}


def run_stage1(dataset: Dataset, config: TrainConfig, val: Optional[Dataset] = None):
    """Train every expert; returns (experts, stage-1 log records)."""
    runs = [list(_expert_epochs(m, dataset, config)) for m in range(dataset.n_modalities)]
    template = initial_model(dataset, replace(config, static_weights=True))
    records = []
    for epoch in range(config.stage1_epochs):
        experts = [run[epoch][0] for run in runs]
        loss = float(np.mean([run[epoch][1] for run in runs]))
        # experts alone, mixed with uniform weights over present modalities
        snapshot = DmomeModel(experts, template.gate, template.modality_dims, 1, template.gate_input,
                              template.gate_sees_mask, True)
        records.append(TrainRecord(epoch, 1, loss, 0.0, 0.0, 0.0, loss, _panel_accuracy(snapshot, val)))
    return [run[-1][0] for run in runs], records


def train_stage2(experts: Sequence[Mlp], gate: Mlp, dataset: Dataset, config: TrainConfig,
                 val: Optional[Dataset] = None, task_count: int = 1, epoch_offset: int = 0):
    """Co-train experts and gate on the paired objective; returns (model, TrainLog)."""
    if len(experts) != dataset.n_modalities:
        raise ConfigError(f"{len(experts)} experts for a {dataset.n_modalities}-modality dataset")
    labels = _class_or_map_labels(dataset, config.loss)
    model = DmomeModel(list(experts), gate, dataset.dims, task_count, config.gate_input,
                       config.gate_sees_mask, config.static_weights)
    trainable = [] if config.freeze_experts else [f"expert_{m}" for m in range(model.n_modalities)]
    if not config.static_weights:
        trainable.append("gate")
    states = {name: AdamState.fresh(net, lr=config.stage2_lr) for name, net in model.models().items()}
    shuffle_rng = _rng(config.seed, 2)
    pair_rng = config.pair_strategy.rng()
    log = TrainLog()
    n, m_count = len(dataset), dataset.n_modalities
    lam = config.loss.effective_lambda
    for epoch in range(config.stage2_epochs):
        sums = np.zeros(4)
        for idx in _batches(n, config.batch_size, shuffle_rng):
            plus, minus = sample_mask_pairs(m_count, config.pair_strategy, pair_rng, len(idx))
            batch = Batch([x[idx] for x in dataset.xs], labels[idx], plus, minus, config.loss)
            try:
                res = objective(model, batch)
            except NumericError as exc:
                raise NumericError(f"stage 2, epoch {epoch}: {exc}") from None
            p = res.parts
            sums += [p.loss_plus.sum(), p.loss_minus.sum(), p.rank.sum(), p.total.sum()]
            updated = {}
            for name in trainable:
                updated[name], states[name] = adam_step(model.models()[name], res.grads[name], states[name])
            model = model.replace(updated)
        lp, lm, hinge, total = sums / n
        log.records.append(TrainRecord(epoch_offset + epoch, 2, lp, lm, lam * hinge, hinge, total,
                                       _panel_accuracy(model, val)))
    return model, log


def train(dataset: Dataset, config: TrainConfig, val: Optional[Dataset] = None,
          experts: Optional[Sequence[Mlp]] = None):
    """Full two-stage run. Pass ``experts`` to reuse a finished stage 1."""
    log = TrainLog()
    if experts is None:
        if config.pretrain_experts:
            experts, records = run_stage1(dataset, config, val)
            log.records.extend(records)
        else:
            experts = initial_model(dataset, config).experts
    gate = initial_model(dataset, config).gate
    offset = config.stage1_epochs if config.pretrain_experts else 0
    model, log2 = train_stage2(experts, gate, dataset, config, val, epoch_offset=offset)
    log.records.extend(log2.records)
    return model, log


# ---------------------------------------------------------------- evaluation


@dataclass
class MaskPredictions:
    mask: ModalityMask
    probs: np.ndarray  # (N, T) class probabilities or per-element foreground probabilities
    preds: np.ndarray  # (N,) classes or (N, P) binary maps
    scores: np.ndarray  # (N,) per-sample score in [0, 1]
    weights: np.ndarray  # (N, M) gating weights
    mixed: np.ndarray  # (N, T) mixed logits

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.scores))


@dataclass
class Evaluation:
    per_mask: Dict[ModalityMask, MaskPredictions]
    labels: np.ndarray
    segmentation: bool

    def records(self):
        out = []
        for mk, p in self.per_mask.items():
            for i in range(len(self.labels)):
                out.append(PredictionRecord(i, mk, p.probs[i], p.preds[i], self.labels[i], float(p.scores[i]),
                                            p.weights[i]))
        return out

    def calibration(self, mask: ModalityMask, bins: int = DEFAULT_BINS) -> Tuple[float, float]:
        p = self.per_mask[mask]
        if not self.segmentation:
            return ece_arrays(p.probs, self.labels, bins), sce_arrays(p.probs, self.labels, bins)
        # binary maps: each element is a two-class prediction
        fg = p.probs.reshape(-1)
        two = np.stack([1.0 - fg, fg], axis=1)
        truth = self.labels.reshape(-1)
        return ece_arrays(two, truth, bins), sce_arrays(two, truth, bins)

    def report(self, bins: int = DEFAULT_BINS, variant: Optional[str] = None) -> EvaluationReport:
        masks = list(self.per_mask)
        rows = []
        for mk in masks:
            p = self.per_mask[mk]
            e, s = self.calibration(mk, bins)
            rows.append(MaskRow(mk, len(p.scores), p.mean_score, e, s, p.weights.mean(axis=0)))
        m = len(masks[0])
        full_grid = enumerate_masks(m)
        cr = float("nan")
        if set(masks) == set(full_grid):
            cr = counterintuitive_rate_matrix(np.stack([self.per_mask[mk].scores for mk in full_grid], axis=1), m)
        return EvaluationReport(rows, cr, variant)


def evaluate(model: DmomeModel, dataset: Dataset, masks: Sequence, score_mode: str = "correct") -> Evaluation:
    if model.task_count != 1:
        raise ConfigError("evaluation supports single-task models only")
    if score_mode not in SCORE_MODES:
        raise ConfigError(f"score mode must be one of {SCORE_MODES}")
    if dataset.dims != list(model.modality_dims):
        raise ConfigError(f"dataset dims {dataset.dims} do not match model dims {model.modality_dims}")
    per_mask = {}
    for mk in masks:
        mk = as_mask(mk, model.n_modalities)
        fwd = forward_batch(model, dataset.xs, mk.array)
        mixed = fwd.mixed[:, 0, :]
        if dataset.is_segmentation:
            probs = expit(mixed)
            preds = (probs > 0.5).astype(np.int8)
            inter = (preds * dataset.labels).sum(axis=1)
            denom = preds.sum(axis=1) + dataset.labels.sum(axis=1)
            scores = np.where(denom == 0, 1.0, 2.0 * inter / np.maximum(denom, 1))
        else:
            probs = softmax(mixed, axis=1)
            preds = probs.argmax(axis=1)
            if score_mode == "correct":
                scores = (preds == dataset.labels).astype(np.float64)
            else:
                scores = probs[np.arange(len(preds)), dataset.labels]
        per_mask[mk] = MaskPredictions(mk, probs, preds, scores, fwd.weights[:, :, 0], mixed)
    return Evaluation(per_mask, dataset.labels, dataset.is_segmentation)
