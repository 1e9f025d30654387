"""Calibration error and counterintuitive rate on small hand-built inputs."""

import numpy as np

from mofelab.metrics import counterintuitive_rate, ece_arrays, predictive_entropy, sce_arrays

# Two predictions in one bin: confidence 0.8 (right) and 0.6 (wrong).
probs = np.array([[0.8, 0.2], [0.6, 0.4]])
print("ECE, one bin:", ece_arrays(probs, np.array([0, 1]), bins=1))
print("SCE, one bin:", sce_arrays(probs, np.array([0, 0]), bins=1))

# Counterintuitive rate: modality 1 alone beats both modalities together,
# which is one of the two (superset, subset) pairs going the wrong way.
scores = {("s0", "10"): 0.6, ("s0", "01"): 0.5, ("s0", "11"): 0.55}
print("CR:", counterintuitive_rate(scores, m=2))

# A noisy classifier's calibration over many draws, 20 bins.
rng = np.random.default_rng(0)
p = rng.dirichlet(np.ones(5) * 0.5, size=5000)
y = np.array([rng.choice(5, p=row) for row in p])  # labels drawn from the stated probabilities
print("ECE of a calibrated model:", round(ece_arrays(p, y), 4))
print("ECE after sharpening:", round(ece_arrays(p ** 3 / (p ** 3).sum(1, keepdims=True), y), 4))

print("entropy of (0.5, 0.25, 0.25):", predictive_entropy([0.5, 0.25, 0.25]))
