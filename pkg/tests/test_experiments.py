import copy

import pytest

from anchor_loss import experiments as E
from anchor_loss.heatmap import PoseLossConfig
from anchor_loss.losses import AnchorMode

BLOBS = {
    "name": "blobs-al",
    "seed": 0,
    "dataset": {"kind": "confusable_blobs", "params": {"n_per_class": 20, "pairs": 2}, "val_fraction": 0.25},
    "train": {"loss_kind": "AL", "gamma": 0.5, "margin": 0.05, "lr": 0.05, "epochs": 3},
    "ablation": {"seeds": [0, 1, 2], "gamma": [0.5, 1.0], "static_anchor": [0.1, 0.5], "ohem_rho": [0.5, 1.0]},
}


def spec(**train):
    s = copy.deepcopy(BLOBS)
    s["train"].update(train)
    return s


class TestValidation:
    def test_valid(self):
        E.validate_spec(spec())

    def test_unknown_key(self):
        s = spec()
        s["trian"] = {}
        with pytest.raises(E.SpecError, match="Additional properties"):
            E.validate_spec(s)

    def test_unknown_nested_key(self):
        with pytest.raises(E.SpecError, match="train"):
            E.validate_spec(spec(gama=1))

    def test_bad_value_names_path(self):
        with pytest.raises(E.SpecError, match="train/lr"):
            E.validate_spec(spec(lr=-1))

    def test_pose_loss_on_blobs(self):
        with pytest.raises(E.SpecError, match="keypoint"):
            E.validate_spec(spec(loss_kind="AL_pose"))


class TestBuild:
    def test_train_config(self):
        cfg = E.build_train_config(spec(anchor_mode="dynamic_both", gamma_target=1.0), 4)
        assert cfg.seed == 4
        assert cfg.loss_cfg.anchor_mode is AnchorMode.DYNAMIC_BOTH
        assert (cfg.loss_cfg.gamma_target, cfg.loss_cfg.gamma_background) == (1.0, 0.5)

    def test_pose_config(self):
        s = {"name": "p", "dataset": {"kind": "symmetric_keypoints"}, "train": {"loss_kind": "AL_pose", "gamma": 1.5}}
        cfg = E.build_train_config(s, 0)
        assert cfg.loss_cfg == PoseLossConfig(gamma=1.5)

    def test_cifar_needs_path(self):
        s = {"name": "c", "dataset": {"kind": "cifar10"}, "train": {"loss_kind": "AL"}}
        with pytest.raises(E.SpecError, match="path"):
            E.build_datasets(s)


class TestRun:
    def test_deterministic(self):
        a, b = E.run_experiment(spec()), E.run_experiment(spec())
        assert a.to_json() == b.to_json()
        assert "final" in a.extra and a.extra["num_params"] > 0

    def test_warmup(self):
        run = E.run_experiment(spec(warmup_epochs=2))
        assert [r.loss_kind for r in run.trace] == ["CE", "CE", "AL"]

    def test_pose_extras(self):
        s = {
            "name": "pose",
            "dataset": {"kind": "symmetric_keypoints", "params": {"n": 8, "height": 16, "width": 16, "pair_distance": 6.0, "sigma": 1.0}},
            "model": {"channels": [4, 4]},
            "train": {"loss_kind": "AL_pose", "lr": 5e-4, "epochs": 1, "batch_size": 4},
        }
        run = E.run_experiment(s)
        assert "untrained_val_pck" in run.extra
        assert set(run.extra["peaks"]) >= {"double_ratio", "peak_correct_ratio"}


class TestAblate:
    def test_rows_and_summary(self):
        rows, summary = E.ablate(spec(), ["gamma", "static_anchor"])
        assert [(r.axis, r.value) for r in rows] == [("gamma", 0.5), ("gamma", 1.0), ("static_anchor", 0.1), ("static_anchor", 0.5)]
        assert all(len(r.top1) == 3 for r in rows)
        assert isinstance(summary["dynamic_not_worse"], bool)

    def test_ohem_rho1_matches_plain(self):
        rows, _ = E.ablate(spec(), "ohem_rho")
        plain = [E.run_experiment(spec(), s).checksum for s in (0, 1, 2)]
        assert rows[1].value == 1.0 and rows[1].checksums == plain

    def test_anchor_mode_axis(self):
        s = spec()
        s["ablation"]["anchor_mode"] = ["dynamic_max_background", "dynamic_target", "dynamic_both"]
        variant = E._variant(s, "anchor_mode", "dynamic_max_background")["train"]
        assert (variant["gamma_target"], variant["gamma_background"]) == (0.5, 0.0)
        variant = E._variant(s, "anchor_mode", "dynamic_both")["train"]
        assert (variant["gamma_target"], variant["gamma_background"]) == (0.5, 0.5)

    def test_missing_values(self):
        with pytest.raises(E.SpecError, match="no values"):
            E.ablate(spec(), "anchor_mode")

    def test_unknown_axis(self):
        with pytest.raises(E.SpecError, match="unknown ablation axis"):
            E.ablate(spec(), "depth")
