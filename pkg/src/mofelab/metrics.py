"""Evaluation metrics: accuracy, Dice, calibration errors, counterintuitive rate."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .dmome import ModalityMask, as_mask
from .errors import EmptyInputError, IncompleteScoresError, ShapeError
from .sampling import enumerate_masks, enumerate_mofe_pairs

DEFAULT_BINS = 20


@dataclass
class PredictionRecord:
    sample_id: Hashable
    mask: ModalityMask
    probs: np.ndarray
    pred: object
    true: object
    score: float
    gating: Optional[np.ndarray] = None


def _nonempty(records):
    if len(records) == 0:
        raise EmptyInputError("no records to score")


def accuracy(records: Sequence[PredictionRecord]) -> float:
    _nonempty(records)
    return sum(int(r.pred) == int(r.true) for r in records) / len(records)


def dice_score(pred_map, true_map) -> float:
    a = np.asarray(pred_map).astype(bool)
    b = np.asarray(true_map).astype(bool)
    if a.shape != b.shape:
        raise ShapeError(f"maps differ in shape: {a.shape} vs {b.shape}")
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / denom)


def bin_index(conf: np.ndarray, bins: int) -> np.ndarray:
    """Bins are (b/B, (b+1)/B]; a confidence of exactly 0 lands in bin 0."""
    idx = np.ceil(np.asarray(conf, dtype=np.float64) * bins).astype(np.int64) - 1
    return np.clip(idx, 0, bins - 1)


@dataclass
class CalibrationReport:
    ece: float
    sce: float
    bins: int
    counts: np.ndarray
    mean_confidence: np.ndarray
    mean_accuracy: np.ndarray


def _binned_gap(conf, hits, bins, n_total):
    idx = bin_index(conf, bins)
    counts = np.bincount(idx, minlength=bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    hit_sum = np.bincount(idx, weights=hits, minlength=bins)
    # |n_b acc_b - n_b conf_b| / N == (n_b / N) |acc_b - conf_b|
    gap = float(np.sum(np.abs(hit_sum - conf_sum)) / n_total)
    return gap, counts, conf_sum, hit_sum


def ece_arrays(probs: np.ndarray, labels: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if len(probs) == 0:
        raise EmptyInputError("no records to score")
    if bins < 1:
        raise ValueError("bins must be positive")
    conf = probs.max(axis=1)
    hits = (probs.argmax(axis=1) == np.asarray(labels)).astype(np.float64)
    return _binned_gap(conf, hits, bins, len(probs))[0]


def sce_arrays(probs: np.ndarray, labels: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if len(probs) == 0:
        raise EmptyInputError("no records to score")
    if bins < 1:
        raise ValueError("bins must be positive")
    n, t = probs.shape
    labels = np.asarray(labels)
    total = 0.0
    for c in range(t):
        total += _binned_gap(probs[:, c], (labels == c).astype(np.float64), bins, n)[0]
    return total / t


def _class_arrays(records):
    _nonempty(records)
    probs = np.stack([np.asarray(r.probs, dtype=np.float64) for r in records])
    labels = np.array([int(r.true) for r in records])
    return probs, labels


def ece(records: Sequence[PredictionRecord], bins: int = DEFAULT_BINS) -> float:
    return ece_arrays(*_class_arrays(records), bins)


def sce(records: Sequence[PredictionRecord], bins: int = DEFAULT_BINS) -> float:
    return sce_arrays(*_class_arrays(records), bins)


def calibration_report(records, bins: int = DEFAULT_BINS) -> CalibrationReport:
    probs, labels = _class_arrays(records)
    conf = probs.max(axis=1)
    hits = (probs.argmax(axis=1) == labels).astype(np.float64)
    gap, counts, conf_sum, hit_sum = _binned_gap(conf, hits, bins, len(probs))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_conf = np.where(counts > 0, conf_sum / counts, 0.0)
        mean_acc = np.where(counts > 0, hit_sum / counts, 0.0)
    return CalibrationReport(gap, sce_arrays(probs, labels, bins), bins, counts, mean_conf, mean_acc)


def counterintuitive_rate(scores: Mapping[Tuple[Hashable, object], float], m: int) -> float:
    """Mean over samples of the fraction of (superset, strict subset) mask pairs
    in which the subset scores strictly higher.

    ``scores`` maps ``(sample_id, mask)`` to the per-sample score; masks may be
    given as :class:`ModalityMask` or bitstrings.
    """
    table: Dict[Hashable, Dict[ModalityMask, float]] = {}
    for (sid, mask), value in scores.items():
        table.setdefault(sid, {})[as_mask(mask, m)] = float(value)
    if not table:
        raise EmptyInputError("no scores given")
    pairs = enumerate_mofe_pairs(m)
    if not pairs:
        return 0.0
    masks = enumerate_masks(m)
    total = 0.0
    for sid, per_mask in table.items():
        missing = [mk.bits for mk in masks if mk not in per_mask]
        if missing:
            raise IncompleteScoresError(f"sample {sid!r} has no score for masks {missing}")
        hits = sum(per_mask[p.minus] > per_mask[p.plus] for p in pairs)
        total += hits / len(pairs)
    return total / len(table)


def counterintuitive_rate_matrix(score_matrix: np.ndarray, m: int) -> float:
    """Same as :func:`counterintuitive_rate` for an (N, 2^m - 1) array whose
    columns follow :func:`enumerate_masks` order."""
    s = np.asarray(score_matrix, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != (1 << m) - 1:
        raise IncompleteScoresError(f"score matrix must be (N, {(1 << m) - 1}), got {s.shape}")
    if s.shape[0] == 0:
        raise EmptyInputError("no scores given")
    pairs = enumerate_mofe_pairs(m)
    if not pairs:
        return 0.0
    col = {mk: i for i, mk in enumerate(enumerate_masks(m))}
    plus = np.array([col[p.plus] for p in pairs])
    minus = np.array([col[p.minus] for p in pairs])
    per_sample = (s[:, minus] > s[:, plus]).sum(axis=1) / len(pairs)
    return float(np.mean(per_sample))


def avg_gating_weights(groups: Mapping[object, Sequence]) -> Dict[ModalityMask, np.ndarray]:
    """Mean gating-weight vector per mask. Group values may be records or raw weight arrays."""
    out = {}
    for mask, items in groups.items():
        if len(items) == 0:
            raise EmptyInputError(f"no records for mask {mask}")
        w = np.stack([np.asarray(getattr(r, "gating", r), dtype=np.float64) for r in items])
        out[as_mask(mask)] = w.mean(axis=0)
    return out


def predictive_entropy(probs) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("probabilities must be non-negative and sum to 1")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


@dataclass
class MaskRow:
    mask: ModalityMask
    n: int
    score: float
    ece: float
    sce: float
    weights: np.ndarray


@dataclass
class EvaluationReport:
    rows: List[MaskRow]
    cr: float
    variant: Optional[str] = None
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def mean_score(self) -> float:
        return float(np.mean([r.score for r in self.rows]))

    @property
    def mean_ece(self) -> float:
        return float(np.mean([r.ece for r in self.rows]))

    @property
    def mean_sce(self) -> float:
        return float(np.mean([r.sce for r in self.rows]))

    def row(self, mask) -> MaskRow:
        mask = as_mask(mask)
        for r in self.rows:
            if r.mask == mask:
                return r
        raise KeyError(mask.bits)

    def to_csv(self) -> str:
        m = len(self.rows[0].mask)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mask", "n", "score", "ece", "sce"] + [f"w_{i}" for i in range(m)])
        for r in self.rows:
            w.writerow([r.mask.bits, r.n, f"{r.score:.6f}", f"{r.ece:.6f}", f"{r.sce:.6f}"]
                       + [f"{x:.6f}" for x in r.weights])
        w.writerow(["CR", f"{self.cr:.6f}"])
        if self.variant is not None:
            w.writerow(["variant", self.variant])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def read_report_csv(path) -> EvaluationReport:
    with open(path, newline="") as fh:
        lines = list(csv.reader(fh))
    rows, cr, variant = [], float("nan"), None
    for line in lines[1:]:
        if line[0] == "CR":
            cr = float(line[1])
        elif line[0] == "variant":
            variant = line[1]
        else:
            rows.append(MaskRow(ModalityMask.from_bits(line[0]), int(line[1]), float(line[2]),
                                float(line[3]), float(line[4]), np.array([float(x) for x in line[5:]])))
    return EvaluationReport(rows, cr, variant)
