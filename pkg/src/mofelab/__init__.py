"""Mixtures of modality experts with a more-vs-fewer ranking loss, on numpy."""

from .dmome import (DmomeModel, GatingWeights, MixtureOutput, ModalityMask, dmome_forward, dmome_init,
                    masked_gate_weights, zero_fill_concat)
from .losses import LossSpec, PairLoss, conf_hinge, cross_entropy, mofe_loss, soft_dice, total_loss
from .nn import AdamState, GradientSet, Mlp, adam_step, mlp_forward, mlp_init

__version__ = "0.1.0"
