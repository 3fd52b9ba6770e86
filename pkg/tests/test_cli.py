import csv
import json
import os

import numpy as np
import pytest

from anchor_loss import cli

SPEC = {
    "name": "cli-run",
    "dataset": {"kind": "confusable_blobs", "params": {"n_per_class": 15, "pairs": 2}},
    "train": {"loss_kind": "AL", "lr": 0.05, "epochs": 2},
    "ablation": {"seeds": [0, 1, 2], "static_anchor": [0.1, 0.5, 0.8]},
}


def read_columns(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(SPEC))
    return path


class TestLossSurface:
    def test_files_and_columns(self, tmp_path):
        assert cli.main(["loss-surface", "--gamma", "0", "2", "--anchor", "0.5", "focal", "--out", str(tmp_path)]) == 0
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["AL_gamma0_anchor0.5.csv", "AL_gamma0_anchorfocal.csv", "AL_gamma2_anchor0.5.csv", "AL_gamma2_anchorfocal.csv"]
        cols = read_columns(tmp_path / "AL_gamma2_anchor0.5.csv")
        assert list(cols) == ["q", "loss", "gradient", "ce_loss", "ce_gradient", "fl_loss", "fl_gradient"]
        assert cols["q"][0] == 1e-7 and cols["q"][-1] == 1 - 1e-7

    def test_gamma0_is_ce(self, tmp_path):
        cli.main(["loss-surface", "--gamma", "0", "--anchor", "0.3", "--out", str(tmp_path)])
        cols = read_columns(tmp_path / "AL_gamma0_anchor0.3.csv")
        np.testing.assert_array_equal(cols["loss"], cols["ce_loss"])

    def test_focal_anchor_is_fl(self, tmp_path):
        cli.main(["loss-surface", "--gamma", "2", "--anchor", "focal", "--out", str(tmp_path)])
        cols = read_columns(tmp_path / "AL_gamma2_anchorfocal.csv")
        np.testing.assert_allclose(cols["loss"], cols["fl_loss"], atol=1e-12)

    def test_crosses_ce_at_anchor(self, tmp_path):
        cli.main(["loss-surface", "--gamma", "2", "--anchor", "0.5", "--step", "0.01", "--out", str(tmp_path)])
        cols = read_columns(tmp_path / "AL_gamma2_anchor0.5.csv")
        i = int(np.argmin(np.abs(cols["q"] - 0.5)))
        assert cols["loss"][i] == pytest.approx(cols["ce_loss"][i], abs=1e-12)

    def test_other_losses_ignore_anchor(self, tmp_path):
        cli.main(["loss-surface", "--loss", "FL", "--gamma", "1", "--anchor", "0.1", "0.2", "--out", str(tmp_path)])
        assert [p.name for p in tmp_path.iterdir()] == ["FL_gamma1_anchornone.csv"]

    @pytest.mark.parametrize("step", ["0", "0.2", "-0.01"])
    def test_bad_step(self, step, tmp_path):
        assert cli.main(["loss-surface", "--step", step, "--out", str(tmp_path)]) == cli.EXIT_VALIDATION

    def test_bad_anchor(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["loss-surface", "--anchor", "1.5"])
        assert exc.value.code == 2

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert cli.main(["loss-surface", "--out", str(blocker / "sub")]) == cli.EXIT_IO

    def test_env_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_ENV, str(tmp_path))
        assert cli.main(["loss-surface"]) == 0
        assert (tmp_path / "loss_surface" / "AL_gamma2_anchor0.5.csv").exists()

    def test_grid(self):
        q = cli.probability_grid(0.03)
        assert q[-1] == 1 - 1e-7 and np.all(np.diff(q) > 0)


class TestVerifyCommand:
    def test_json_report(self, tmp_path, capsys):
        out = tmp_path / "r" / "report.json"
        assert cli.main(["verify", "--json", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["passed"] and report["summary"]["failed"] == []
        assert "PASS G2_gradient_fd_oracle" in capsys.readouterr().out

    def test_failure_exit_code(self, monkeypatch, capsys):
        from anchor_loss import losses as L

        original = L.anchor_loss_gradient
        monkeypatch.setattr(L, "anchor_loss_gradient", lambda *a, **k: -original(*a, **k))
        assert cli.main(["verify"]) == cli.EXIT_NUMERICAL
        assert "G2_gradient_fd_oracle" in capsys.readouterr().err


class TestTrainCommand:
    def test_writes_files(self, spec_file, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["train", "--spec", str(spec_file), "--out", str(out)]) == 0
        run_dir = out / "cli-run"
        assert {p.name for p in run_dir.iterdir()} == {"run.json", "run.csv", "summary.json"}
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["final"]["epoch"] == 1

    def test_idempotent(self, spec_file, tmp_path):
        cli.main(["train", "--spec", str(spec_file), "--out", str(tmp_path / "a")])
        cli.main(["train", "--spec", str(spec_file), "--out", str(tmp_path / "b")])
        for name in ("run.json", "run.csv", "summary.json"):
            assert (tmp_path / "a" / "cli-run" / name).read_bytes() == (tmp_path / "b" / "cli-run" / name).read_bytes()

    def test_seed_subdirectory(self, spec_file, tmp_path):
        cli.main(["train", "--spec", str(spec_file), "--seed", "3", "--out", str(tmp_path)])
        assert (tmp_path / "cli-run" / "seed3" / "run.json").exists()

    def test_spec_output_dir(self, tmp_path):
        s = dict(SPEC, output_dir=str(tmp_path / "from-spec"))
        path = tmp_path / "s.json"
        path.write_text(json.dumps(s))
        assert cli.main(["train", "--spec", str(path)]) == 0
        assert (tmp_path / "from-spec" / "cli-run" / "run.csv").exists()

    def test_invalid_spec(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(dict(SPEC, extra=1)))
        assert cli.main(["train", "--spec", str(path)]) == cli.EXIT_VALIDATION

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{")
        assert cli.main(["train", "--spec", str(path)]) == cli.EXIT_VALIDATION

    def test_missing_spec(self, tmp_path):
        assert cli.main(["train", "--spec", str(tmp_path / "nope.json")]) == cli.EXIT_IO

    def test_divergence_exit(self, tmp_path, monkeypatch):
        from anchor_loss import training as T

        def diverge(*a, **k):
            raise T.TrainingDiverged(0)

        monkeypatch.setattr(cli, "run_experiment", diverge)
        path = tmp_path / "s.json"
        path.write_text(json.dumps(SPEC))
        assert cli.main(["train", "--spec", str(path)]) == cli.EXIT_NUMERICAL


class TestAblateCommand:
    def test_static_rows(self, spec_file, tmp_path, capsys):
        assert cli.main(["ablate", "--spec", str(spec_file), "--axis", "static_anchor", "--out", str(tmp_path)]) == 0
        with open(tmp_path / "cli-run" / "ablation_static_anchor.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["value"] for r in rows] == ["0.1", "0.5", "0.8"]
        assert all(r["seeds"] == "0 1 2" for r in rows)

    def test_missing_axis_values(self, spec_file, tmp_path):
        assert cli.main(["ablate", "--spec", str(spec_file), "--axis", "gamma", "--out", str(tmp_path)]) == cli.EXIT_VALIDATION


def test_module_entry_point():
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-m", "anchor_loss", "--help"], capture_output=True, text=True, env=os.environ.copy())
    assert out.returncode == 0 and "loss-surface" in out.stdout
