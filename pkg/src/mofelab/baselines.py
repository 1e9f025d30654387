"""Ablation variants sharing one pipeline.

``simmlm``       gated mixture + loss-level ranking hinge
``no_mofe``      gated mixture, ranking term switched off
``conf_hinge``   gated mixture, max-probability confidence hinge in place of the loss hinge
``static_mean``  uniform weights over present modalities, gate never trained
"""

from __future__ import annotations

from dataclasses import replace

from .config import VARIANTS, ExperimentConfig
from .data import Dataset, generate
from .errors import ConfigError
from .metrics import EvaluationReport
from .sampling import enumerate_masks
from .training import TrainConfig, evaluate, train


def apply_variant(config: TrainConfig, variant: str) -> TrainConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if variant == "no_mofe":
        return replace(config, loss=replace(config.loss, mofe_enabled=False))
    if variant == "conf_hinge":
        return replace(config, loss=replace(config.loss, ranking="conf"))
    if variant == "static_mean":
        return replace(config, static_weights=True)
    return config


def run_variant(variant: str, config: ExperimentConfig, train_data: Dataset, test_data: Dataset,
                val_data: Dataset = None, experts=None):
    """Train and evaluate one variant on every mask; returns (report, model, log)."""
    tc = apply_variant(config.train_config(), variant)
    model, log = train(train_data, tc, val_data, experts=experts)
    ev = evaluate(model, test_data, enumerate_masks(train_data.n_modalities), config.cr_score)
    return ev.report(config.bins, variant), model, log


def compare_variants(variants, config: ExperimentConfig, seeds):
    """Paired comparison. Each seed regenerates the synthetic data and trains
    every variant on it with that same seed.

    Returns ``{variant: [EvaluationReport per seed]}``.
    """
    out = {v: [] for v in variants}
    for seed in seeds:
        cfg = config.with_overrides(seed=seed)
        train_data, _, test_data = generate(cfg.synth())
        for v in variants:
            out[v].append(run_variant(v, cfg, train_data, test_data)[0])
    return out


__all__ = ["apply_variant", "run_variant", "compare_variants", "EvaluationReport"]
