"""Synthetic Gaussian multimodal datasets with an exact Bayes posterior.

Class ``c`` has one centroid per modality; modality ``m`` of a sample is its
class centroid plus isotropic noise of scale ``noise[m]``. Because the
modalities are conditionally independent given the class, the posterior
under any subset of modalities is available in closed form.

Datasets are stored as MMDS1 text files::

    MMDS1
    M=2 C=3 N=2 dims=2,1 split=train
    0
    0.5 -1.25
    2.0
    2
    ...

One label line per sample followed by one line per modality. Segmentation
datasets add ``task=segmentation P=<len>`` to the header and write the label
as space-separated 0/1 entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from .dmome import as_mask
from .errors import ConfigError, EmptyInputError, ParseError, TruncationError

MAGIC = "MMDS1"
SPLITS = ("train", "val", "test")
TASKS = ("classification", "segmentation")


@dataclass(frozen=True)
class SynthConfig:
    n_modalities: int = 3
    n_classes: int = 4
    dims: Tuple[int, ...] = (4, 4, 4)
    noise: Tuple[float, ...] = (1.0, 1.0, 1.0)
    centroid_scale: float = 1.0
    n_train: int = 1000
    n_val: int = 500
    n_test: int = 1000
    seed: int = 0
    task: str = "classification"
    map_size: int = 16

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "noise", tuple(float(s) for s in self.noise))
        if self.n_modalities < 2:
            raise ConfigError("need at least 2 modalities")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if len(self.dims) != self.n_modalities or any(d < 1 for d in self.dims):
            raise ConfigError(f"dims {self.dims} must list {self.n_modalities} positive sizes")
        if len(self.noise) != self.n_modalities or any(not s > 0 for s in self.noise):
            raise ConfigError(f"noise {self.noise} must list {self.n_modalities} positive scales")
        if not self.centroid_scale > 0:
            raise ConfigError("centroid_scale must be positive")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ConfigError("every split needs at least one sample")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        if self.map_size < 1:
            raise ConfigError("map_size must be positive")


@dataclass
class MultimodalSample:
    features: Tuple[np.ndarray, ...]
    label: object  # int class index or binary map


@dataclass
class Dataset:
    """Column-major storage: one (N, d_m) array per modality plus labels."""

    xs: List[np.ndarray]
    labels: np.ndarray  # (N,) ints or (N, P) binary maps
    split: str = "train"
    n_classes: int = 2
    config: Optional[SynthConfig] = field(default=None, compare=False)
    classes: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.labels) == 0:
            raise EmptyInputError("dataset is empty")
        if any(x.shape[0] != len(self.labels) for x in self.xs):
            raise ConfigError("modalities disagree on sample count")

    def __len__(self):
        return len(self.labels)

    @property
    def n_modalities(self) -> int:
        return len(self.xs)

    @property
    def dims(self) -> List[int]:
        return [x.shape[1] for x in self.xs]

    @property
    def is_segmentation(self) -> bool:
        return self.labels.ndim == 2

    @property
    def output_dim(self) -> int:
        return self.labels.shape[1] if self.is_segmentation else self.n_classes

    def __getitem__(self, i) -> MultimodalSample:
        label = self.labels[i].copy() if self.is_segmentation else int(self.labels[i])
        return MultimodalSample(tuple(x[i] for x in self.xs), label)

    @property
    def samples(self) -> List[MultimodalSample]:
        return [self[i] for i in range(len(self))]

    def subset(self, idx) -> "Dataset":
        cls = None if self.classes is None else self.classes[idx]
        return Dataset([x[idx] for x in self.xs], self.labels[idx], self.split, self.n_classes,
                       self.config, cls)

    def equals(self, other: "Dataset") -> bool:
        """Bit-exact equality of features and labels."""
        return (self.split == other.split and self.n_classes == other.n_classes
                and len(self.xs) == len(other.xs)
                and all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.xs, other.xs))
                and self.labels.shape == other.labels.shape
                and np.array_equal(self.labels, other.labels))


def class_centroids(config: SynthConfig) -> List[np.ndarray]:
    """Per-modality (C, d_m) centroid arrays."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(4)[0])
    allc = config.centroid_scale * rng.standard_normal((config.n_classes, sum(config.dims)))
    return np.split(allc, np.cumsum(config.dims)[:-1], axis=1)


def class_templates(config: SynthConfig) -> np.ndarray:
    """(C, P) binary target maps used in segmentation mode."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    maps = rng.random((config.n_classes, config.map_size)) < 0.5
    maps[np.arange(config.n_classes), rng.integers(config.map_size, size=config.n_classes)] = True
    return maps.astype(np.int8)


def _draw_split(config: SynthConfig, n: int, seq: np.random.SeedSequence, split: str) -> Dataset:
    rng = np.random.default_rng(seq)
    mus = class_centroids(config)
    classes = rng.integers(config.n_classes, size=n)
    xs = [mu[classes] + s * rng.standard_normal((n, mu.shape[1])) for mu, s in zip(mus, config.noise)]
    labels = class_templates(config)[classes] if config.task == "segmentation" else classes
    return Dataset(xs, labels, split, config.n_classes, config, classes)


def generate(config: SynthConfig) -> Tuple[Dataset, Dataset, Dataset]:
    seqs = np.random.SeedSequence(config.seed).spawn(4)
    sizes = (config.n_train, config.n_val, config.n_test)
    return tuple(_draw_split(config, n, s, name) for n, s, name in zip(sizes, seqs[1:], SPLITS))


def bayes_log_likelihoods(config: SynthConfig, xs: Sequence[np.ndarray], mask) -> np.ndarray:
    mask = as_mask(mask, config.n_modalities)
    mus = class_centroids(config)
    ll = 0.0
    for m in mask.indices():
        x = np.atleast_2d(np.asarray(xs[m], dtype=np.float64))
        sq = ((x[:, None, :] - mus[m][None, :, :]) ** 2).sum(axis=2)
        ll = ll - sq / (2.0 * config.noise[m] ** 2)
    return ll


def bayes_posterior_batch(config: SynthConfig, xs: Sequence[np.ndarray], mask) -> np.ndarray:
    """(N, C) exact class posteriors using only the present modalities."""
    return softmax(bayes_log_likelihoods(config, xs, mask), axis=1)


def bayes_posterior(config: SynthConfig, sample, mask) -> np.ndarray:
    feats = getattr(sample, "features", sample)
    return bayes_posterior_batch(config, [np.asarray(f)[None, :] for f in feats], mask)[0]


def bayes_accuracy(config: SynthConfig, data: Dataset, mask) -> float:
    post = bayes_posterior_batch(config, data.xs, mask)
    truth = data.classes if data.classes is not None else data.labels
    return float(np.mean(post.argmax(axis=1) == truth))


# ---------------------------------------------------------------- MMDS1 I/O


def _fmt(row) -> str:
    return " ".join(repr(float(v)) for v in row)


def save_dataset(data: Dataset, path) -> None:
    head = (f"M={data.n_modalities} C={data.n_classes} N={len(data)} "
            f"dims={','.join(str(d) for d in data.dims)} split={data.split}")
    if data.is_segmentation:
        head += f" task=segmentation P={data.labels.shape[1]}"
    lines = [MAGIC, head]
    for i in range(len(data)):
        if data.is_segmentation:
            lines.append(" ".join(str(int(v)) for v in data.labels[i]))
        else:
            lines.append(str(int(data.labels[i])))
        lines.extend(_fmt(x[i]) for x in data.xs)
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_header(line: str):
    fields = {}
    for tok in line.split():
        key, sep, value = tok.partition("=")
        if not sep:
            raise ParseError(f"malformed header token {tok!r}", 2)
        fields[key] = value
    for key in ("M", "C", "N", "dims", "split"):
        if key not in fields:
            raise ParseError(f"header is missing {key}", 2)
    try:
        m, c, n = int(fields["M"]), int(fields["C"]), int(fields["N"])
        dims = [int(d) for d in fields["dims"].split(",")]
        p = int(fields["P"]) if fields.get("task") == "segmentation" else None
    except ValueError as exc:
        raise ParseError(f"bad header value: {exc}", 2) from None
    if len(dims) != m:
        raise ParseError(f"dims lists {len(dims)} entries but M={m}", 2)
    return m, c, n, dims, fields["split"], p


def load_dataset(path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != MAGIC:
        raise ParseError(f"bad magic, expected {MAGIC!r}", 1)
    if len(lines) < 2:
        raise TruncationError("file ends before the header line")
    m, c, n, dims, split, p = _parse_header(lines[1])
    per_sample = 1 + m
    body = lines[2:]
    while body and body[-1] == "":
        body.pop()
    if len(body) < n * per_sample:
        raise TruncationError(f"header promises N={n} samples, file holds {len(body) // per_sample}")
    if len(body) > n * per_sample:
        raise ParseError(f"unexpected content after {n} samples", 3 + n * per_sample)
    xs = [np.empty((n, d)) for d in dims]
    labels = np.empty((n, p), dtype=np.int8) if p is not None else np.empty(n, dtype=np.int64)
    for i in range(n):
        base = i * per_sample
        lineno = 3 + base
        try:
            if p is not None:
                labels[i] = [int(v) for v in body[base].split()]
            else:
                labels[i] = int(body[base])
                if not 0 <= labels[i] < c:
                    raise ValueError(f"label {labels[i]} outside [0, {c})")
        except ValueError as exc:
            raise ParseError(f"bad label: {exc}", lineno) from None
        for k in range(m):
            try:
                row = [float(v) for v in body[base + 1 + k].split()]
            except ValueError as exc:
                raise ParseError(f"bad float: {exc}", lineno + 1 + k) from None
            if len(row) != dims[k]:
                raise ParseError(f"expected {dims[k]} values, got {len(row)}", lineno + 1 + k)
            xs[k][i] = row
    return Dataset(xs, labels, split, c)


def split_paths(prefix) -> dict:
    prefix = str(prefix)
    return {s: Path(f"{prefix}.{s}.mmds") for s in SPLITS}


def save_splits(prefix, splits: Sequence[Dataset]) -> dict:
    paths = split_paths(prefix)
    for data in splits:
        save_dataset(data, paths[data.split])
    return paths


def load_splits(prefix) -> dict:
    return {s: load_dataset(p) for s, p in split_paths(prefix).items()}
