"""Two-stage training on a synthetic three-modality task, then every mask."""

import numpy as np

from mofelab.data import SynthConfig, bayes_accuracy, generate
from mofelab.sampling import enumerate_masks
from mofelab.training import TrainConfig, evaluate, train

# Modality 2 is much noisier than the other two.
synth = SynthConfig(n_modalities=3, n_classes=4, dims=(4, 4, 4), noise=(1.0, 1.0, 3.0), n_test=2000, seed=0)
train_set, val_set, test_set = generate(synth)

config = TrainConfig(stage1_epochs=20, stage2_epochs=20, seed=0)
model, log = train(train_set, config, val_set)
print("last epoch:", log.records[-1])

evaluation = evaluate(model, test_set, enumerate_masks(3))
print(f"{'mask':>5} {'model':>7} {'bayes':>7}  mean gate weights")
for mask, preds in evaluation.per_mask.items():
    w = np.round(preds.weights.mean(axis=0), 3)
    print(f"{mask.bits:>5} {preds.mean_score:7.3f} {bayes_accuracy(synth, test_set, mask):7.3f}  {w}")

report = evaluation.report()
print("counterintuitive rate:", round(report.cr, 4))
