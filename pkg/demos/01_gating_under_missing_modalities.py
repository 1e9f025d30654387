"""How the gate spreads weight over whichever modalities are present."""

import numpy as np

from mofelab import ModalityMask, dmome_forward, dmome_init, masked_gate_weights

# Three raw gate scores, one per modality. With everything present the
# weights are an ordinary softmax.
logits = np.array([np.log(2.0), 0.0, 1.0])
print("full mask     ", masked_gate_weights(logits, "111").weights.ravel())

# Drop modality 2: its weight is exactly zero and the rest renormalise.
print("modality 2 off", masked_gate_weights(logits, "110").weights.ravel())

# One modality left means weight 1 on it, whatever its score was.
print("only modality1", masked_gate_weights(logits, "010").weights.ravel())

# A whole mixture: two experts over inputs of size 3 and 2, four classes.
model = dmome_init([3, 2], 4, expert_hidden=(8,), gate_hidden=(8,), seed=0)
sample = [np.array([0.3, -1.0, 2.0]), np.array([0.5, 0.1])]

for bits in ("11", "10", "01"):
    out = dmome_forward(model, sample, bits)
    ran = [i for i, e in enumerate(out.expert_logits) if e is not None]
    print(f"mask {bits}: experts run {ran}, weights {np.round(out.gating.weights.ravel(), 3)}")

# Under a single-modality mask the mixture is exactly that expert.
out = dmome_forward(model, sample, ModalityMask.only(2, 0))
print("matches expert 0:", np.array_equal(out.mixed_logits, out.expert_logits[0]))
