"""Gradient check, then the four ablation variants over a few seeds."""

import numpy as np

from mofelab.baselines import compare_variants
from mofelab.config import ExperimentConfig
from mofelab.harness import run_gradcheck

# Before trusting any training run, check the analytic gradients.
results = run_gradcheck()
print(f"gradcheck: {len(results)} cases, worst relative error {max(r.max_error for r in results):.2e}")

config = ExperimentConfig(stage1_epochs=15, stage2_epochs=15)
runs = compare_variants(["simmlm", "no_mofe", "conf_hinge", "static_mean"], config, seeds=[0, 1, 2])

print(f"{'variant':<12} {'mean score':>10} {'CR':>8} {'ECE':>8}")
for name, reports in runs.items():
    score = np.mean([r.mean_score for r in reports])
    cr = np.mean([r.cr for r in reports])
    ece = np.mean([r.mean_ece for r in reports])
    print(f"{name:<12} {score:10.4f} {cr:8.4f} {ece:8.4f}")
