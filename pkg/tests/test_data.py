import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mofelab.data import (SynthConfig, bayes_accuracy, bayes_posterior, bayes_posterior_batch, class_centroids,
                          generate, load_dataset, load_splits, save_dataset, save_splits)
from mofelab.errors import ConfigError, EmptyInputError, ParseError, TruncationError
from mofelab.sampling import enumerate_masks


def small(**kw):
    base = dict(n_modalities=2, n_classes=3, dims=(2, 3), noise=(1.0, 0.5), n_train=20, n_val=10, n_test=15, seed=4)
    base.update(kw)
    return SynthConfig(**base)


class TestGenerate:
    def test_deterministic(self):
        a, b = generate(small()), generate(small())
        assert all(x.equals(y) for x, y in zip(a, b))

    def test_seed_changes_data(self):
        assert not generate(small())[0].equals(generate(small(seed=5))[0])

    def test_splits_differ(self):
        tr, va, te = generate(small(n_train=10, n_val=10, n_test=10))
        assert not np.array_equal(tr.xs[0], va.xs[0]) and not np.array_equal(va.xs[0], te.xs[0])
        assert (tr.split, va.split, te.split) == ("train", "val", "test")

    def test_class_frequencies(self):
        tr = generate(SynthConfig(2, 2, (2, 2), (0.5, 0.5), n_train=10000, n_val=1, n_test=1, seed=0))[0]
        freq = np.bincount(tr.labels, minlength=2) / len(tr)
        np.testing.assert_allclose(freq, [0.5, 0.5], atol=0.02)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            SynthConfig(2, 3, (2,), (1.0, 1.0))
        with pytest.raises(ConfigError):
            SynthConfig(2, 3, (2, 2), (1.0, -1.0))

    def test_segmentation_labels(self):
        tr = generate(small(task="segmentation", map_size=8))[0]
        assert tr.labels.shape == (20, 8) and set(np.unique(tr.labels)) <= {0, 1}
        assert tr.is_segmentation and tr.output_dim == 8

    def test_empty_rejected(self):
        tr = generate(small())[0]
        with pytest.raises(EmptyInputError):
            tr.subset([])


class TestBayes:
    def test_midway_is_even(self):
        cfg = SynthConfig(2, 2, (3, 2), (0.7, 0.7), seed=9)
        mus = class_centroids(cfg)
        mid = [(mu[0] + mu[1]) / 2 for mu in mus]
        np.testing.assert_allclose(bayes_posterior(cfg, mid, "11"), [0.5, 0.5], atol=1e-12)

    def test_degenerate_noise_is_one_hot(self):
        cfg = SynthConfig(2, 3, (2, 2), (1e-6, 1e-6), seed=2)
        at_c1 = [mu[1] for mu in class_centroids(cfg)]
        np.testing.assert_allclose(bayes_posterior(cfg, at_c1, "11"), [0, 1, 0], atol=1e-12)

    def test_noiseless_accuracy(self):
        cfg = SynthConfig(2, 4, (3, 3), (1e-3, 1e-3), n_train=200, n_val=1, n_test=1, seed=0)
        assert bayes_accuracy(cfg, generate(cfg)[0], "11") == 1.0

    def test_singleton_ignores_absent(self):
        cfg = small()
        rng = np.random.default_rng(0)
        xs = [rng.standard_normal((5, 2)), rng.standard_normal((5, 3))]
        other = [xs[0], rng.standard_normal((5, 3))]
        np.testing.assert_array_equal(bayes_posterior_batch(cfg, xs, "10"), bayes_posterior_batch(cfg, other, "10"))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_rows_normalised(self, seed):
        cfg = small(seed=seed)
        tr = generate(cfg)[0]
        for mk in enumerate_masks(2):
            np.testing.assert_allclose(bayes_posterior_batch(cfg, tr.xs, mk).sum(axis=1), 1.0, atol=1e-12)

    def test_monotone_under_refinement(self):
        cfg = SynthConfig(3, 4, (4, 4, 4), (1.0, 1.0, 3.0), n_train=5000, n_val=1, n_test=1, seed=0)
        tr = generate(cfg)[0]
        acc = {mk: bayes_accuracy(cfg, tr, mk) for mk in enumerate_masks(3)}
        for big in acc:
            for sub in acc:
                if sub.is_strict_subset_of(big):
                    assert acc[big] >= acc[sub] - 0.005


class TestMmds:
    @pytest.mark.parametrize("task", ["classification", "segmentation"])
    def test_round_trip(self, tmp_path, task):
        tr = generate(small(task=task, map_size=5))[0]
        save_dataset(tr, tmp_path / "d.mmds")
        back = load_dataset(tmp_path / "d.mmds")
        assert back.equals(tr)
        for a, b in zip(tr.xs, back.xs):
            assert a.tobytes() == b.tobytes()

    def test_splits(self, tmp_path):
        splits = generate(small())
        save_splits(tmp_path / "x", splits)
        loaded = load_splits(tmp_path / "x")
        assert all(loaded[d.split].equals(d) for d in splits)

    def test_format_header(self, tmp_path):
        save_dataset(generate(small())[0], tmp_path / "d.mmds")
        lines = (tmp_path / "d.mmds").read_text().splitlines()
        assert lines[0] == "MMDS1"
        assert lines[1] == "M=2 C=3 N=20 dims=2,3 split=train"

    def test_bad_magic(self, tmp_path):
        (tmp_path / "d.mmds").write_text("XXXX\nM=1 C=2 N=0 dims=1 split=train\n")
        with pytest.raises(ParseError) as exc:
            load_dataset(tmp_path / "d.mmds")
        assert exc.value.line == 1

    def test_truncated(self, tmp_path):
        (tmp_path / "d.mmds").write_text("MMDS1\nM=1 C=2 N=3 dims=1 split=train\n0\n0.5\n1\n-0.5\n")
        with pytest.raises(TruncationError):
            load_dataset(tmp_path / "d.mmds")

    def test_bad_float_line_number(self, tmp_path):
        (tmp_path / "d.mmds").write_text("MMDS1\nM=1 C=2 N=2 dims=1 split=train\n0\n0.5\n1\nabc\n")
        with pytest.raises(ParseError) as exc:
            load_dataset(tmp_path / "d.mmds")
        assert exc.value.line == 6
