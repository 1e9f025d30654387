"""Sweep the ranking-loss weight through the CLI layer, writing CSVs to a temp dir."""

import tempfile
from pathlib import Path

from mofelab.config import ExperimentConfig
from mofelab.harness import DEFAULT_LAMBDAS, cmd_sweep

config = ExperimentConfig(stage1_epochs=15, stage2_epochs=15)
out = Path(tempfile.mkdtemp(prefix="mofelab-sweep-"))

# Stage 1 is trained once; only the co-training stage is repeated per value.
rows = cmd_sweep(config, DEFAULT_LAMBDAS, out=out)
for lam, score, cr, ece in rows:
    print(f"lambda={lam:<5} mean score={score:.4f} CR={cr:.4f} ECE={ece:.4f}")

print((out / "sweep.csv").read_text())
