"""The more-vs-fewer hinge and the combined pair objective, on hand numbers."""

import numpy as np

from mofelab import LossSpec, dmome_forward, dmome_init, mofe_loss, total_loss

# The hinge is zero when the richer input already has the lower loss...
print("hinge(0.5, 0.8) =", mofe_loss(0.5, 0.8))
# ...and otherwise charges the gap.
print("hinge(0.9, 0.4) =", mofe_loss(0.9, 0.4))

# On a real pair of forward passes: the full mask against a strict subset.
# This untrained model does better on label 2 with modality 1 alone, so the
# hinge is active and grows with lambda.
model = dmome_init([2, 2], 3, seed=1)
sample = [np.array([1.0, -0.5]), np.array([0.2, 0.7])]
plus = dmome_forward(model, sample, "11")
minus = dmome_forward(model, sample, "01")

for lam in (0.0, 0.1, 1.0):
    parts = total_loss(plus, minus, label=2, spec=LossSpec(lam=lam))
    print(f"lambda={lam:<4} loss+={parts.loss_plus:.4f} loss-={parts.loss_minus:.4f} "
          f"hinge={parts.mofe:.4f} total={parts.total:.4f}")

# The confidence-based alternative compares max probabilities instead.
parts = total_loss(plus, minus, label=2, spec=LossSpec(ranking="conf"))
print("confidence hinge:", round(parts.mofe, 4))
