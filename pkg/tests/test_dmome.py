import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import mofelab.dmome as dm
from mofelab.dmome import (DmomeModel, ModalityMask, dmome_forward, dmome_init, forward_batch,
                           masked_gate_weights, zero_fill_concat)
from mofelab.errors import MaskError, NumericError
from mofelab.nn import Mlp


class TestZeroFill:
    sample = (np.array([1.0, 2.0]), np.array([3.0]))

    def test_masked_modality_zeroed(self):
        np.testing.assert_array_equal(zero_fill_concat(self.sample, (True, False)), [1.0, 2.0, 0.0])

    def test_full_mask(self):
        np.testing.assert_array_equal(zero_fill_concat(self.sample, (True, True)), [1.0, 2.0, 3.0])

    def test_all_absent(self):
        with pytest.raises(MaskError):
            zero_fill_concat(self.sample, (False, False))


class TestMaskedGateWeights:
    def test_uniform(self):
        w = masked_gate_weights([0.0, 0.0, 0.0], (True, True, True)).weights[:, 0]
        np.testing.assert_allclose(w, [1 / 3] * 3, atol=1e-15)

    def test_single_survivor(self):
        w = masked_gate_weights([5.0, -3.0, 40.0], (False, True, False)).weights[:, 0]
        np.testing.assert_array_equal(w, [0.0, 1.0, 0.0])

    def test_hand_softmax(self):
        w = masked_gate_weights([math.log(2.0), 0.0], (True, True)).weights[:, 0]
        np.testing.assert_allclose(w, [2 / 3, 1 / 3], atol=1e-15)

    def test_nonfinite(self):
        with pytest.raises(NumericError):
            masked_gate_weights([np.nan, 0.0], (True, True))

    def test_large_logits_do_not_overflow(self):
        w = masked_gate_weights([1000.0, 999.0, -1e6], (True, True, True)).weights[:, 0]
        assert np.all(np.isfinite(w))
        assert w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_task_columns_identical_for_identical_logits(self):
        g = np.array([[0.3, 0.3], [-1.2, -1.2], [2.0, 2.0]])
        w = masked_gate_weights(g, (True, False, True)).weights
        assert w[:, 0].tobytes() == w[:, 1].tobytes()


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 4), st.integers(1, 2), st.integers(0, 2**31 - 1), st.floats(-50, 50))
def test_simplex_and_shift_invariance(m, k, seed, c):
    rng = np.random.default_rng(seed)
    logits = rng.normal(scale=5.0, size=(m, k))
    mask = rng.random(m) < 0.5
    mask[rng.integers(m)] = True
    w = masked_gate_weights(logits, mask).weights
    np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(w[~mask] == 0.0) and np.all(w[mask] > 0.0)
    np.testing.assert_allclose(masked_gate_weights(logits + c, mask).weights, w, atol=1e-12)


def _hand_model():
    # expert 0: x1 (scalar) -> (x1, 0); expert 1: x2 (scalar) -> (0, x2); gate logits (ln 2, 0)
    e0 = Mlp([1, 2], [np.array([[1.0], [0.0]])], [np.zeros(2)])
    e1 = Mlp([1, 2], [np.array([[0.0], [1.0]])], [np.zeros(2)])
    gate = Mlp([2, 2], [np.zeros((2, 2))], [np.array([math.log(2.0), 0.0])])
    return DmomeModel([e0, e1], gate, [1, 1])


class TestForward:
    def test_hand_composition(self):
        out = dmome_forward(_hand_model(), (np.array([2.0]), np.array([3.0])), (True, True))
        np.testing.assert_allclose(out.mixed_logits, [4 / 3, 1.0], atol=1e-15)
        np.testing.assert_allclose(out.gating.weights[:, 0], [2 / 3, 1 / 3], atol=1e-15)

    def test_single_modality_is_expert_output(self):
        model = dmome_init([3, 2, 4], 5, seed=1)
        x = (np.ones(3), np.arange(2.0), -np.ones(4))
        for i in range(3):
            out = dmome_forward(model, x, ModalityMask.only(3, i))
            assert out.mixed_logits.tobytes() == out.expert_logits[i].tobytes()
            assert [o is None for o in out.expert_logits] == [j != i for j in range(3)]

    def test_zero_gate_gives_mean_of_experts(self):
        model = dmome_init([3, 2], 4, seed=2)
        gate = model.gate.with_flat(np.zeros(model.gate.n_params))
        model = model.replace({"gate": gate})
        out = dmome_forward(model, (np.ones(3), np.ones(2)), (True, True))
        np.testing.assert_allclose(out.mixed_logits, np.mean(out.expert_logits, axis=0), atol=1e-12)

    def test_mixture_invariant(self):
        rng = np.random.default_rng(0)
        model = dmome_init([2, 3, 2], 3, task_count=2, seed=4)
        for _ in range(50):
            x = tuple(rng.standard_normal(d) for d in (2, 3, 2))
            mask = rng.random(3) < 0.6
            mask[rng.integers(3)] = True
            out = dmome_forward(model, x, mask)
            for k in range(2):
                ref = sum(out.gating.weights[m, k] * out.expert_logits[m] for m in range(3) if mask[m])
                np.testing.assert_allclose(out.mixed_logits[k], ref, atol=1e-12)

    def test_masked_features_never_read(self):
        rng = np.random.default_rng(3)
        model = dmome_init([2, 3, 2], 3, seed=5)
        x = [rng.standard_normal(d) for d in (2, 3, 2)]
        mask = (True, False, True)
        ref = dmome_forward(model, x, mask)
        for _ in range(5):
            x2 = list(x)
            x2[1] = rng.standard_normal(3) * 1e6
            out = dmome_forward(model, x2, mask)
            assert out.mixed_logits.tobytes() == ref.mixed_logits.tobytes()
            assert out.gating.weights.tobytes() == ref.gating.weights.tobytes()

    def test_masked_experts_not_evaluated(self, monkeypatch):
        calls = []
        real = dm.mlp_forward_batch

        def counting(model, x, name="mlp"):
            calls.append(name)
            return real(model, x, name)

        monkeypatch.setattr(dm, "mlp_forward_batch", counting)
        model = dmome_init([2, 2, 2], 3, seed=0)
        dmome_forward(model, [np.ones(2)] * 3, (False, True, False))
        assert calls == ["expert_1", "gate"]

    def test_gate_sees_mask_option(self):
        model = dmome_init([2, 2], 3, gate_sees_mask=True, seed=0)
        assert model.gate.in_dim == 6
        a = dmome_forward(model, [np.zeros(2), np.zeros(2)], (True, False))
        b = dmome_forward(model, [np.zeros(2), np.zeros(2)], (True, True))
        assert not np.array_equal(a.gating.source_logits, b.gating.source_logits)

    def test_batch_all_absent_rejected(self):
        model = dmome_init([2, 2], 3, seed=0)
        with pytest.raises(MaskError):
            forward_batch(model, [np.zeros((2, 2))] * 2, np.array([[True, False], [False, False]]))


def test_mask_bits():
    mk = ModalityMask.from_bits("1011")
    assert mk.bits == "1011" and mk.indices() == [0, 2, 3]
    assert ModalityMask.from_bits("0010").is_strict_subset_of(mk)
    assert not mk.is_strict_subset_of(mk)
