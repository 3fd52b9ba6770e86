import jsonschema
import numpy as np
import pytest

from anchor_loss import losses as L
from anchor_loss import verify as V

# Adding a check means updating this number: the registry is the contract.
EXPECTED_CHECKS = 23
MODULES = {"numerics", "losses", "heatmap", "model", "data"}


@pytest.fixture(scope="module")
def report():
    return V.run_checks()


class TestRegistry:
    def test_count(self):
        assert len(V.REGISTRY) == EXPECTED_CHECKS

    def test_every_module_covered(self):
        assert {module for module, _, _ in V.REGISTRY.values()} == MODULES

    def test_duplicate_name_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            V.check("G2_gradient_fd_oracle", "losses", "again")(lambda: None)

    def test_invariant_ids_present(self):
        for prefix in ("I1", "I2", "I3", "O1", "G1", "G2", "M1"):
            assert any(name.startswith(prefix + "_") for name in V.REGISTRY)


class TestReport:
    def test_all_pass(self, report):
        assert report["passed"], report["summary"]["failed"]

    def test_schema(self, report):
        jsonschema.validate(report, V.REPORT_SCHEMA)

    def test_errors_within_tolerance(self, report):
        for c in report["checks"]:
            if c["tolerance"] is not None and c["max_error"] is not None:
                assert c["max_error"] < c["tolerance"], c["name"]

    def test_subset(self):
        r = V.run_checks(["N3_rng_determinism"])
        assert r["summary"]["total"] == 1


class TestMutation:
    def test_sign_flip_fails_g2(self, monkeypatch):
        original = L.anchor_loss_gradient
        monkeypatch.setattr(L, "anchor_loss_gradient", lambda *a, **k: -original(*a, **k))
        r = V.run_checks(["G2_gradient_fd_oracle"])
        assert not r["passed"]
        assert r["summary"]["failed"] == ["G2_gradient_fd_oracle"]

    def test_crashing_check_is_reported(self, monkeypatch):
        def boom(*a, **k):
            raise RuntimeError("kaput")

        monkeypatch.setattr(L, "anchor_loss", boom)
        r = V.run_checks(["I1_al_gamma0_is_bce"])
        assert not r["passed"]
        assert "kaput" in r["checks"][0]["detail"]


class TestProbes:
    def test_probes_reach_both_edges(self):
        q = V.probability_probes(np.random.default_rng(0), 5000)
        assert q.min() < 1e-5 and q.max() > 1 - 1e-5
        assert np.all((q > 0) & (q < 1))

    def test_model_gradient_small_models(self):
        for kind, pose in V.E2E_KINDS:
            err, n = V.model_gradient_error(kind, pose, seed=2)
            assert n <= 50
            assert err < 1e-5
