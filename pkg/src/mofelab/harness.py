"""Experiment commands: data generation, training, evaluation, lambda sweeps
and the gradient check. Each ``cmd_*`` function is what the matching CLI
verb runs; they return paths/results and raise :mod:`mofelab.errors`
exceptions, leaving exit codes to :mod:`mofelab.cli`.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .baselines import apply_variant
from .checkpoint import load_checkpoint, load_model, save_checkpoint, save_model
from .config import VARIANTS, ExperimentConfig, dump_config
from .data import generate, load_splits, save_splits, split_paths
from .dmome import DmomeModel, dmome_init, forward_batch
from .errors import ConfigError, DataError
from .losses import LossSpec, confidence_batch, task_loss_batch
from .objective import Batch, finite_diff_grad, gradient_error, loss_and_grad, task_labels
from .sampling import PairStrategy, enumerate_masks, sample_mask_pairs
from .training import evaluate, run_stage1, train

DEFAULT_LAMBDAS = (0.0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0)
GRADCHECK_TOL = 1e-4


@dataclass
class RunManifest:
    run_id: str
    command: str
    seed: int
    variant: str
    config_path: str
    checkpoints: List[str] = field(default_factory=list)
    reports: List[str] = field(default_factory=list)
    inputs: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    wall_clock_s: float = 0.0

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")


def _run_id(command: str, config: ExperimentConfig) -> str:
    return hashlib.sha256((command + "\n" + dump_config(config)).encode()).hexdigest()[:12]


def _out_dir(config: ExperimentConfig, out) -> Path:
    path = Path(out if out is not None else config.out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {path}: {exc}") from None
    return path


def _write_resolved(config: ExperimentConfig, out: Path) -> Path:
    path = out / "config.resolved"
    path.write_text(dump_config(config))
    return path


def _load_data(config: ExperimentConfig, data_prefix):
    if data_prefix is None:
        train, val, test = generate(config.synth())
        return {"train": train, "val": val, "test": test}
    missing = [str(p) for p in split_paths(data_prefix).values() if not p.exists()]
    if missing:
        raise DataError(f"missing dataset files: {', '.join(missing)}")
    return load_splits(data_prefix)


def _check_dims(config: ExperimentConfig, splits) -> None:
    for name, data in splits.items():
        if data.n_modalities != config.M or data.dims != list(config.dims):
            raise ConfigError(f"{name} split has dims {data.dims}, config says M={config.M} "
                              f"dims={list(config.dims)}")
        if data.is_segmentation != (config.task == "segmentation"):
            raise ConfigError(f"{name} split task does not match config task {config.task!r}")


def cmd_gen(config: ExperimentConfig, out=None) -> Dict[str, Path]:
    out = _out_dir(config, out)
    try:
        paths = save_splits(out / config.name, generate(config.synth()))
        _write_resolved(config, out)
    except OSError as exc:
        raise DataError(f"cannot write datasets to {out}: {exc}") from None
    return paths


def cmd_train(config: ExperimentConfig, data_prefix=None, out=None, variant: Optional[str] = None):
    """Two-stage training; writes model.ckpt, experts.ckpt, trainlog.csv,
    config.resolved and manifest.json into the output directory."""
    t0 = time.perf_counter()
    if variant is not None:
        config = config.with_overrides(variant=variant)
    out = _out_dir(config, out)
    splits = _load_data(config, data_prefix)
    _check_dims(config, splits)
    tc = apply_variant(config.train_config(), config.variant)
    experts, records = run_stage1(splits["train"], tc, splits["val"]) if tc.pretrain_experts else (None, [])
    model, log = train(splits["train"], tc, splits["val"], experts=experts)
    log.records[:0] = records

    cfg_path = _write_resolved(config, out)
    ckpt, experts_ckpt, log_path = out / "model.ckpt", out / "experts.ckpt", out / "trainlog.csv"
    save_model(ckpt, model, variant=config.variant)
    if experts is not None:
        save_checkpoint(experts_ckpt, {f"expert_{m}": e for m, e in enumerate(experts)},
                        {"M": len(experts), "stage": 1})
    log.write_csv(log_path)
    manifest = RunManifest(_run_id("train", config), "train", config.seed, config.variant, str(cfg_path),
                           [str(ckpt)] + ([str(experts_ckpt)] if experts is not None else []),
                           [str(log_path)],
                           [str(data_prefix)] if data_prefix is not None else ["generated from config"])
    manifest.wall_clock_s = round(time.perf_counter() - t0, 3)
    manifest.write(out / "manifest.json")
    return manifest


def cmd_eval(config: ExperimentConfig, checkpoint, data_prefix=None, out=None, variant: Optional[str] = None):
    """Evaluate every non-empty mask on the test split; writes report.csv."""
    t0 = time.perf_counter()
    out = _out_dir(config, out)
    try:
        model, meta = load_model(checkpoint)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {checkpoint}: {exc}") from None
    test = _load_data(config, data_prefix)["test"]
    if test.dims != list(model.modality_dims) or test.output_dim != model.output_dim:
        raise ConfigError(f"checkpoint expects dims {model.modality_dims} -> {model.output_dim}, "
                          f"data has {test.dims} -> {test.output_dim}")
    label = meta.get("variant", config.variant)
    if variant is not None:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
        if variant == "static_mean":
            model = DmomeModel(model.experts, model.gate, model.modality_dims, model.task_count,
                               model.gate_input, model.gate_sees_mask, True)
        label = variant
    ev = evaluate(model, test, enumerate_masks(model.n_modalities), config.cr_score)
    report = ev.report(config.bins, label)
    path = out / "report.csv"
    report.write_csv(path)
    cfg_path = _write_resolved(config, out)
    manifest = RunManifest(_run_id("eval", config), "eval", config.seed, label, str(cfg_path),
                           [str(checkpoint)], [str(path)],
                           [str(data_prefix)] if data_prefix is not None else ["generated from config"])
    manifest.wall_clock_s = round(time.perf_counter() - t0, 3)
    manifest.write(out / "manifest_eval.json")
    return report, path


def parse_lambdas(text) -> List[float]:
    if text is None:
        return list(DEFAULT_LAMBDAS)
    items = text.split(",") if isinstance(text, str) else list(text)
    try:
        lams = [float(x) for x in items]
    except ValueError as exc:
        raise ConfigError(f"bad lambda list: {exc}") from None
    if not lams:
        raise ConfigError("empty lambda list")
    if any(not (x >= 0 and np.isfinite(x)) for x in lams):
        raise ConfigError(f"lambdas must be non-negative, got {lams}")
    if len(set(lams)) != len(lams):
        raise ConfigError(f"duplicate lambda values in {lams}")
    return lams


def cmd_sweep(config: ExperimentConfig, lambdas=None, data_prefix=None, out=None):
    """Train and evaluate once per lambda, reusing one stage-1 expert set.

    Writes ``lambda_<value>/`` subdirectories and ``sweep.csv`` with columns
    lambda, mean_score, cr, ece.
    """
    t0 = time.perf_counter()
    lams = parse_lambdas(lambdas)
    out = _out_dir(config, out)
    splits = _load_data(config, data_prefix)
    _check_dims(config, splits)
    tc = apply_variant(config.train_config(), config.variant)
    experts, stage1_records = run_stage1(splits["train"], tc, splits["val"])
    save_checkpoint(out / "experts.ckpt", {f"expert_{m}": e for m, e in enumerate(experts)},
                    {"M": len(experts), "stage": 1})
    rows, reports = [], []
    for lam in lams:
        cfg = config.with_overrides(lam=lam)
        sub = _out_dir(cfg, out / f"lambda_{lam!r}")
        model, log = train(splits["train"], apply_variant(cfg.train_config(), cfg.variant), splits["val"],
                           experts=experts)
        log.records[:0] = stage1_records
        save_model(sub / "model.ckpt", model, variant=cfg.variant)
        log.write_csv(sub / "trainlog.csv")
        _write_resolved(cfg, sub)
        report = evaluate(model, splits["test"], enumerate_masks(model.n_modalities), cfg.cr_score) \
            .report(cfg.bins, cfg.variant)
        report.write_csv(sub / "report.csv")
        reports.append(str(sub / "report.csv"))
        rows.append((lam, report.mean_score, report.cr, report.mean_ece))
    lines = ["lambda,mean_score,cr,ece"] + [f"{lam!r},{s:.6f},{c:.6f},{e:.6f}" for lam, s, c, e in rows]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    cfg_path = _write_resolved(config, out)
    manifest = RunManifest(_run_id("sweep", config), "sweep", config.seed, config.variant, str(cfg_path),
                           [str(out / "experts.ckpt")], reports + [str(out / "sweep.csv")],
                           [str(data_prefix)] if data_prefix is not None else ["generated from config"],
                           ["stage-1 experts trained once and shared by every lambda"])
    manifest.wall_clock_s = round(time.perf_counter() - t0, 3)
    manifest.write(out / "manifest.json")
    return rows


# ---------------------------------------------------------------- gradient check


@dataclass(frozen=True)
class GradCase:
    M: int
    K: int
    hinge: str  # "active" or "inactive"
    mode: str = "full_vs_sub"
    task_loss: str = "cross_entropy"
    ranking: str = "mofe"
    gate_input: str = "raw"
    gate_sees_mask: bool = False
    detach_minus: bool = False
    static_weights: bool = False

    def describe(self) -> str:
        text = f"M={self.M} K={self.K} hinge={self.hinge} pairs={self.mode} loss={self.task_loss}"
        if self.ranking != "mofe":
            text += f" ranking={self.ranking}"
        if self.gate_input != "raw":
            text += f" gate_input={self.gate_input}"
        if self.gate_sees_mask:
            text += " gate_sees_mask"
        if self.detach_minus:
            text += " detach_minus"
        if self.static_weights:
            text += " static_weights"
        return text


def gradcheck_cases() -> List[GradCase]:
    # detach_minus is excluded: a stop-gradient is not the derivative of the scalar objective
    cases = [GradCase(m, k, h, mode) for m in (2, 3) for k in (1, 2) for h in ("active", "inactive")
             for mode in ("full_vs_sub", "nested_random")]
    cases += [
        GradCase(3, 1, "active", ranking="conf"),
        GradCase(2, 2, "active", ranking="conf"),
        GradCase(2, 1, "active", task_loss="dice_plus_bce"),
        GradCase(3, 1, "inactive", task_loss="soft_dice"),
        GradCase(3, 1, "active", gate_input="expert_features"),
        GradCase(3, 2, "active", gate_sees_mask=True),
        GradCase(3, 1, "active", static_weights=True),
    ]
    return cases


def _hinge_args(model, batch):
    spec = batch.spec
    labels = task_labels(batch.labels, model.task_count, spec.is_classification)
    mp = forward_batch(model, batch.xs, batch.masks_plus).mixed
    mm = forward_batch(model, batch.xs, batch.masks_minus).mixed
    if spec.ranking == "mofe":
        return task_loss_batch(mp, labels, spec.task_loss)[0] - task_loss_batch(mm, labels, spec.task_loss)[0]
    return confidence_batch(mm, spec.task_loss)[0] - confidence_batch(mp, spec.task_loss)[0]


def build_grad_instance(case: GradCase, seed: int = 0, n: int = 3, margin: float = 1e-3, max_tries: int = 5000):
    """Small random mixture + batch whose hinge is uniformly active/inactive with a margin."""
    dims = [2, 3, 2][:case.M]
    seg = case.task_loss != "cross_entropy"
    t = 4 if seg else 3
    for attempt in range(max_tries):
        rng = np.random.default_rng([seed, attempt])
        model = dmome_init(dims, t, task_count=case.K, expert_hidden=(4,), gate_hidden=(5,),
                           gate_input=case.gate_input, gate_sees_mask=case.gate_sees_mask,
                           static_weights=case.static_weights, seed=int(rng.integers(2**31)))
        # nonzero biases so every parameter gets a generic gradient
        model = model.replace({name: net.with_flat(net.flat() + 0.3 * rng.standard_normal(net.n_params))
                               for name, net in model.models().items()})
        xs = [rng.standard_normal((n, d)) for d in dims]
        if seg:
            labels = rng.integers(0, 2, size=(n, case.K, t))
        else:
            labels = rng.integers(0, t, size=(n, case.K))
        plus, minus = sample_mask_pairs(case.M, PairStrategy(case.mode, seed), rng, n)
        spec = LossSpec(case.task_loss, 0.5, True, case.ranking, case.detach_minus)
        batch = Batch(xs, labels, plus, minus, spec)
        d = _hinge_args(model, batch)
        if (case.hinge == "active" and np.all(d > margin)) or (case.hinge == "inactive" and np.all(d < -margin)):
            return model, batch
    raise RuntimeError(f"no {case.hinge} instance found for {case.describe()}")


@dataclass
class GradCheckResult:
    case: GradCase
    n_params: int
    max_error: float
    worst_param: str

    @property
    def passed(self) -> bool:
        return self.max_error < GRADCHECK_TOL


def run_gradcheck(cases: Optional[Sequence[GradCase]] = None, step: float = 1e-5, seed: int = 0,
                  corrupt: Optional[str] = None) -> List[GradCheckResult]:
    """Analytic vs central-difference gradients for every case.

    ``corrupt`` names a parameter (e.g. ``"gate.W0[0,0]"``, or just ``"gate"``
    for its first entry) whose analytic gradient is deliberately offset by 1;
    used to prove the check can fail.
    """
    results = []
    for case in cases or gradcheck_cases():
        model, batch = build_grad_instance(case, seed)
        _, analytic = loss_and_grad(model, batch)
        if corrupt is not None:
            name, _, path = corrupt.partition(".")
            if name not in analytic:
                raise ConfigError(f"cannot corrupt unknown network {name!r}")
            paths = model.models()[name].param_paths()
            path = path or paths[0]
            if path not in paths:
                raise ConfigError(f"cannot corrupt unknown parameter {corrupt!r}")
            flat = analytic[name].flat()
            flat[paths.index(path)] += 1.0
            fake = model.models()[name].with_flat(flat)
            analytic[name].weights, analytic[name].biases = fake.weights, fake.biases
        numeric = finite_diff_grad(model, batch, step)
        err, where = gradient_error(analytic, numeric, model)
        results.append(GradCheckResult(case, sum(n.n_params for n in model.models().values()), err, where))
    return results


def cmd_gradcheck(config: Optional[ExperimentConfig] = None, corrupt: Optional[str] = None, echo=print) -> bool:
    seed = config.seed if config is not None else 0
    results = run_gradcheck(seed=seed, corrupt=corrupt)
    for r in results:
        status = "PASS" if r.passed else f"FAIL at {r.worst_param}"
        echo(f"{r.case.describe():<75s} params={r.n_params:4d} max_rel_err={r.max_error:.3e} {status}")
    worst = max(results, key=lambda r: r.max_error)
    echo(f"checked {len(results)} configurations; max relative error {worst.max_error:.3e} "
         f"(tolerance {GRADCHECK_TOL:g})")
    failed = [r for r in results if not r.passed]
    for r in failed:
        echo(f"FAILED parameter: {r.worst_param} ({r.case.describe()})")
    echo("gradcheck: PASS" if not failed else "gradcheck: FAIL")
    return not failed
