"""Modality-subset sampling and enumeration."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import List

import numpy as np

from .dmome import ModalityMask
from .errors import ConfigError, InvalidPairError

PAIR_MODES = ("full_vs_sub", "nested_random")


@dataclass(frozen=True)
class MaskPair:
    plus: ModalityMask
    minus: ModalityMask

    def __post_init__(self):
        if not self.minus.is_strict_subset_of(self.plus):
            raise InvalidPairError(f"{self.minus.bits} is not a strict subset of {self.plus.bits}")


@dataclass(frozen=True)
class PairStrategy:
    mode: str = "full_vs_sub"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in PAIR_MODES:
            raise ConfigError(f"unknown pair strategy {self.mode!r}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def _mask_from_int(code: int, m: int) -> ModalityMask:
    # bit i of code is modality i
    return ModalityMask(tuple(bool((code >> i) & 1) for i in range(m)))


def _subsets_of(code: int) -> List[int]:
    """Non-empty strict subsets of the bit set ``code``, ascending."""
    out, sub = [], (code - 1) & code
    while sub:
        out.append(sub)
        sub = (sub - 1) & code
    return sorted(out)


def sample_mask_pair(m: int, strategy: PairStrategy, rng: np.random.Generator) -> MaskPair:
    if m < 2:
        raise ConfigError(f"pair sampling needs at least 2 modalities, got {m}")
    full = (1 << m) - 1
    if strategy.mode == "full_vs_sub":
        plus = full
    else:
        eligible = [c for c in range(1, full + 1) if bin(c).count("1") >= 2]
        plus = eligible[rng.integers(len(eligible))]
    subs = _subsets_of(plus)
    minus = subs[rng.integers(len(subs))]
    return MaskPair(_mask_from_int(plus, m), _mask_from_int(minus, m))


def sample_mask_pairs(m: int, strategy: PairStrategy, rng: np.random.Generator, n: int):
    """``n`` independent pairs as two (n, m) bool arrays (plus, minus)."""
    plus = np.empty((n, m), dtype=bool)
    minus = np.empty((n, m), dtype=bool)
    for i in range(n):
        pair = sample_mask_pair(m, strategy, rng)
        plus[i] = pair.plus.array
        minus[i] = pair.minus.array
    return plus, minus


def enumerate_masks(m: int) -> List[ModalityMask]:
    """All 2^m - 1 non-empty masks, ordered by ascending integer code (bit i = modality i)."""
    if not 1 <= m <= 16:
        raise ConfigError(f"modality count must be in [1, 16], got {m}")
    return [_mask_from_int(c, m) for c in range(1, 1 << m)]


def enumerate_mofe_pairs(m: int) -> List[MaskPair]:
    if not 1 <= m <= 10:
        raise ConfigError(f"modality count must be in [1, 10], got {m}")
    pairs = []
    for plus in range(1, 1 << m):
        for minus in _subsets_of(plus):
            pairs.append(MaskPair(_mask_from_int(plus, m), _mask_from_int(minus, m)))
    return pairs


def mofe_pair_count(m: int) -> int:
    """Closed form: sum over non-empty A of (2^|A| - 2)."""
    return sum(comb(m, a) * (2 ** a - 2) for a in range(1, m + 1))
