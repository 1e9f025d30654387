import json

import numpy as np
import pytest

from mofelab import cli, harness
from mofelab.config import ExperimentConfig, dump_config, load_config, parse_config
from mofelab.errors import ConfigError

SMALL = """\
name = tiny
M = 2
C = 3
dims = 2,2
noise = 1.0,2.0
n_train = 60
n_val = 20
n_test = 40
stage1_epochs = 2
stage2_epochs = 2
batch_size = 16
expert_hidden = 4
gate_hidden = 4
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(SMALL)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestConfig:
    def test_defaults(self):
        c = ExperimentConfig()
        assert c.lam == 0.1 and c.bins == 20 and c.stage2_epochs >= 1

    def test_typo_key_named(self):
        with pytest.raises(ConfigError, match="lamda"):
            parse_config("lamda = 0.1\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="lambda"):
            parse_config("lambda = lots\n")
        with pytest.raises(ConfigError):
            parse_config("lambda = -1\n")

    def test_dump_round_trip(self, cfg_path):
        c = load_config(cfg_path)
        assert parse_config(dump_config(c)) == c

    def test_comments_and_blanks(self):
        c = parse_config("# comment\n\nlambda = 0.5  # trailing\n")
        assert c.lam == 0.5


class TestGen:
    def test_files_and_headers(self, tmp_path, cfg_path, capsys):
        assert run("gen", "--config", cfg_path, "--out", tmp_path / "d") == 0
        for split, n in (("train", 60), ("val", 20), ("test", 40)):
            lines = (tmp_path / "d" / f"tiny.{split}.mmds").read_text().splitlines()
            assert lines[:2] == ["MMDS1", f"M=2 C=3 N={n} dims=2,2 split={split}"]
        assert (tmp_path / "d" / "config.resolved").exists()
        assert len(capsys.readouterr().out.splitlines()) == 3

    def test_rerun_identical(self, tmp_path, cfg_path):
        run("gen", "--config", cfg_path, "--out", tmp_path / "a")
        run("gen", "--config", cfg_path, "--out", tmp_path / "b")
        for split in ("train", "val", "test"):
            assert (tmp_path / "a" / f"tiny.{split}.mmds").read_bytes() == \
                   (tmp_path / "b" / f"tiny.{split}.mmds").read_bytes()

    def test_typo_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("lamda = 0.1\n")
        assert run("gen", "--config", bad, "--out", tmp_path) == 1
        assert "lamda" in capsys.readouterr().err

    def test_unwritable_out(self, tmp_path, cfg_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run("gen", "--config", cfg_path, "--out", blocker / "sub") == 2

    def test_usage_error(self):
        assert run("nonsense") == 1


class TestTrainEval:
    def test_end_to_end(self, tmp_path, cfg_path):
        assert run("gen", "--config", cfg_path, "--out", tmp_path / "d") == 0
        out = tmp_path / "run"
        assert run("train", "--config", cfg_path, "--data", tmp_path / "d" / "tiny", "--out", out) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        for path in manifest["checkpoints"] + manifest["reports"] + [manifest["config_path"]]:
            assert (tmp_path / path).exists() or __import__("pathlib").Path(path).exists()
        assert run("eval", "--config", cfg_path, "--data", tmp_path / "d" / "tiny", "--out", out) == 0
        lines = (out / "report.csv").read_text().splitlines()
        assert lines[0] == "mask,n,score,ece,sce,w_0,w_1"
        assert [l.split(",")[0] for l in lines[1:4]] == ["10", "01", "11"]
        assert lines[4].startswith("CR,")

    def test_reruns_byte_identical(self, tmp_path, cfg_path):
        for d in ("a", "b"):
            assert run("train", "--config", cfg_path, "--out", tmp_path / d) == 0
            assert run("eval", "--config", cfg_path, "--out", tmp_path / d) == 0
        for name in ("model.ckpt", "experts.ckpt", "trainlog.csv", "report.csv", "config.resolved"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_mofe_column(self, tmp_path, cfg_path):
        def mofe_column(lam, d):
            cfg = load_config(cfg_path).with_overrides(lam=lam)
            harness.cmd_train(cfg, out=tmp_path / d)
            rows = [l.split(",") for l in (tmp_path / d / "trainlog.csv").read_text().splitlines()[1:]]
            return [float(r[4]) for r in rows if r[1] == "2"]

        assert all(v == 0 for v in mofe_column(0.0, "l0"))
        assert any(v != 0 for v in mofe_column(0.1, "l1"))

    def test_dim_mismatch(self, tmp_path, cfg_path):
        run("gen", "--config", cfg_path, "--out", tmp_path / "d")
        other = tmp_path / "other.cfg"
        other.write_text(SMALL.replace("dims = 2,2", "dims = 3,2"))
        assert run("train", "--config", other, "--data", tmp_path / "d" / "tiny", "--out", tmp_path / "r") == 1

    def test_missing_data(self, tmp_path, cfg_path):
        assert run("train", "--config", cfg_path, "--data", tmp_path / "nope", "--out", tmp_path / "r") == 2

    def test_checkpoint_data_mismatch(self, tmp_path, cfg_path):
        run("train", "--config", cfg_path, "--out", tmp_path / "r")
        other = tmp_path / "other.cfg"
        other.write_text(SMALL.replace("dims = 2,2", "dims = 3,2"))
        assert run("eval", "--config", other, "--checkpoint", tmp_path / "r" / "model.ckpt",
                   "--out", tmp_path / "e") == 1

    def test_four_modalities_fifteen_rows(self, tmp_path, cfg_path):
        cfg = load_config(cfg_path).with_overrides(M=4, dims=(2, 2, 2, 2), noise=(1.0, 1.0, 1.0, 2.0))
        harness.cmd_train(cfg, out=tmp_path)
        report, path = harness.cmd_eval(cfg, tmp_path / "model.ckpt", out=tmp_path)
        lines = path.read_text().splitlines()
        assert len(report.rows) == 15
        assert len([l for l in lines[1:] if l[0] in "01"]) == 15
        assert lines[16].startswith("CR,")

    def test_variant_recorded(self, tmp_path, cfg_path):
        assert run("train", "--config", cfg_path, "--out", tmp_path, "--variant", "conf_hinge") == 0
        assert run("eval", "--config", cfg_path, "--out", tmp_path) == 0
        assert (tmp_path / "report.csv").read_text().splitlines()[-1] == "variant,conf_hinge"
        assert json.loads((tmp_path / "manifest.json").read_text())["variant"] == "conf_hinge"

    def test_seed_flag_overrides(self, tmp_path, cfg_path):
        run("train", "--config", cfg_path, "--out", tmp_path / "a", "--seed", "1")
        run("train", "--config", cfg_path, "--out", tmp_path / "b", "--seed", "2")
        assert (tmp_path / "a" / "model.ckpt").read_bytes() != (tmp_path / "b" / "model.ckpt").read_bytes()
        assert "seed = 1" in (tmp_path / "a" / "config.resolved").read_text()


class TestSweep:
    def test_default_seven_rows(self, tmp_path, cfg_path):
        assert run("sweep", "--config", cfg_path, "--out", tmp_path) == 0
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == "lambda,mean_score,cr,ece"
        assert [float(l.split(",")[0]) for l in lines[1:]] == [0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0]
        assert (tmp_path / "experts.ckpt").exists()

    def test_zero_only_equals_plain_run(self, tmp_path, cfg_path):
        cfg = load_config(cfg_path).with_overrides(lam=0.0)
        rows = harness.cmd_sweep(cfg, "0", out=tmp_path / "s")
        harness.cmd_train(cfg, out=tmp_path / "p")
        report, path = harness.cmd_eval(cfg, tmp_path / "p" / "model.ckpt", out=tmp_path / "p")
        assert len(rows) == 1
        assert rows[0][1:] == (report.mean_score, report.cr, report.mean_ece)
        assert (tmp_path / "s" / "lambda_0.0" / "report.csv").read_bytes() == path.read_bytes()

    def test_invalid_lists(self, tmp_path, cfg_path):
        assert run("sweep", "--config", cfg_path, "--out", tmp_path, "--lambdas", "0.1,0.1") == 1
        assert run("sweep", "--config", cfg_path, "--out", tmp_path, "--lambdas", "-0.1") == 1
        with pytest.raises(ConfigError):
            harness.parse_lambdas("")


class TestGradcheck:
    def test_passes(self, capsys):
        assert run("gradcheck") == 0
        out = capsys.readouterr().out
        assert "gradcheck: PASS" in out
        assert "K=2" in out and "nested_random" in out and "inactive" in out

    def test_corrupted_gradient_named(self, capsys):
        assert run("gradcheck", "--corrupt", "gate") != 0
        out = capsys.readouterr().out
        assert "gradcheck: FAIL" in out
        assert "FAILED parameter: gate." in out

    def test_corrupted_parameter_path(self, capsys):
        assert run("gradcheck", "--corrupt", "expert_1.b0[0]") == 3
        assert "FAILED parameter: expert_1.b0[0]" in capsys.readouterr().out

    def test_corrupt_unknown_name(self):
        assert run("gradcheck", "--corrupt", "expert_9") == 1
