"""Registry of invariant checks run by ``anchor-loss verify``.

Each check returns a :class:`CheckResult` carrying the largest observed
error, so a report shows how close to its tolerance every identity sits.
Implementations are looked up through their modules at call time; patching
a loss function is therefore visible to the checks.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import data as D
from . import heatmap as HM
from . import losses as L
from . import model as M
from . import numerics as N
from . import training as T

REPORT_SCHEMA = {
    "type": "object",
    "required": ["passed", "summary", "checks"],
    "additionalProperties": False,
    "properties": {
        "passed": {"type": "boolean"},
        "summary": {
            "type": "object",
            "required": ["total", "failed"],
            "properties": {"total": {"type": "integer"}, "failed": {"type": "array", "items": {"type": "string"}}},
        },
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "module", "passed", "max_error", "tolerance", "detail"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "module": {"type": "string"},
                    "passed": {"type": "boolean"},
                    "max_error": {"type": ["number", "null"]},
                    "tolerance": {"type": ["number", "null"]},
                    "detail": {"type": "string"},
                },
            },
        },
    },
}


@dataclass
class CheckResult:
    name: str
    module: str
    passed: bool
    max_error: float | None
    tolerance: float | None
    detail: str = ""


REGISTRY: dict[str, tuple[str, str, Callable[[], CheckResult]]] = {}


def check(name: str, module: str, description: str):
    def deco(fn):
        if name in REGISTRY:
            raise ValueError(f"duplicate check {name}")
        REGISTRY[name] = (module, description, fn)
        return fn

    return deco


def _result(name, err, tol, detail="", passed=None) -> CheckResult:
    module = REGISTRY[name][0]
    err = None if err is None else float(err)
    if passed is None:
        passed = err is not None and math.isfinite(err) and err < tol
    return CheckResult(name, module, bool(passed), err, tol, detail)


# -- probes -----------------------------------------------------------------------------


def probability_probes(rng, shape, floor=N.EPS):
    """Probabilities covering the interior and both edges down to ``2 * floor``."""
    u = rng.uniform(0.001, 0.999, size=shape)
    edge = np.exp(rng.uniform(np.log(2 * floor), np.log(0.001), size=shape))
    pick = rng.uniform(size=shape)
    return np.where(pick < 0.8, u, np.where(pick < 0.9, edge, 1.0 - edge))


def random_anchor_config(rng, mode=None) -> L.AnchorLossConfig:
    modes = list(L.AnchorMode)
    return L.AnchorLossConfig(
        gamma_target=float(rng.choice([0.0, 0.5, 1.0, 2.0, rng.uniform(0, 3)])),
        gamma_background=float(rng.choice([0.0, 0.5, 1.0, 2.0, rng.uniform(0, 3)])),
        margin=float(rng.choice([0.0, 0.05, rng.uniform(0, 0.2)])),
        anchor_mode=mode or modes[rng.integers(len(modes))],
        static_anchor=float(rng.uniform(0, 1)),
    )


def loss_gradient_errors(n_probes: int = 1000, seed: int = 0) -> dict[str, float]:
    """Max FD relative error per loss family over random probes, anchors frozen."""
    rng = N.seeded_rng(seed)
    worst = {"bce": 0.0, "focal": 0.0, "anchor": 0.0, "pose": 0.0}
    modes = list(L.AnchorMode)
    per_family = n_probes // 4
    for i in range(per_family):
        K = int(rng.integers(2, 6))
        p = np.eye(K)[rng.integers(K)]
        q = probability_probes(rng, K)
        h = N.probability_fd_steps(q)

        fd = N.termwise_difference_gradient(lambda x: L.bce(p, x).per_class, q, h)
        worst["bce"] = max(worst["bce"], N.relative_error(L.bce_gradient(p, q), fd).max())

        g = float(rng.choice([0.0, 0.5, 1.0, 2.0, rng.uniform(0, 5)]))
        fd = N.termwise_difference_gradient(lambda x: L.focal_loss(p, x, g).per_class, q, h)
        worst["focal"] = max(worst["focal"], N.relative_error(L.focal_loss_gradient(p, q, g), fd).max())

        cfg = random_anchor_config(rng, modes[i % len(modes)])
        anchors = L.anchor_probabilities(p, q, cfg)
        fd = N.termwise_difference_gradient(lambda x: L.anchor_loss(p, x, cfg, anchors).per_class, q, h)
        an = L.anchor_loss_gradient(p, q, cfg, anchors)
        worst["anchor"] = max(worst["anchor"], N.relative_error(an, fd).max())

        target, pred = _random_heatmap_pair(rng, 5, 5)
        pcfg = HM.PoseLossConfig(gamma=float(rng.choice([0.0, 1.0, 2.0, rng.uniform(0, 5)])))
        anchor = HM.select_anchor(target, N.clamp_probability(pred), pcfg.anchor_threshold)
        hp = N.probability_fd_steps(pred)
        fd = N.termwise_difference_gradient(lambda x: HM.pose_anchor_loss(target, x, pcfg, anchor).per_class, pred, hp)
        an = HM.pose_anchor_loss_gradient(target, pred, pcfg, anchor)
        worst["pose"] = max(worst["pose"], N.relative_error(an, fd).max())
    return worst


def _random_heatmap_pair(rng, H, W):
    ann = HM.KeypointAnnotation(float(rng.integers(W)), float(rng.integers(H)), True, float(rng.uniform(0.6, 1.2)))
    target = HM.encode_gaussian(ann, H, W).values
    pred = probability_probes(rng, (H, W))
    return target, pred


# -- numerics ---------------------------------------------------------------------------


@check("N1_softmax_normalised", "numerics", "softmax sums to 1 within 1e-12, entries in (0,1)")
def _n1():
    rng = N.seeded_rng(1)
    z = rng.normal(scale=4, size=(2000, 7))
    s = N.softmax(z)
    err = np.abs(s.sum(axis=1) - 1.0).max()
    ok = bool(np.all((s > 0) & (s < 1)))
    return _result("N1_softmax_normalised", err, 1e-12, "entries in (0,1)" if ok else "entry outside (0,1)", ok and err < 1e-12)


@check("N2_sigmoid_symmetry", "numerics", "sigmoid(-z) = 1 - sigmoid(z) within 1e-15")
def _n2():
    z = np.linspace(-40, 40, 20001)
    err = np.abs(N.sigmoid(-z) - (1.0 - N.sigmoid(z))).max()
    return _result("N2_sigmoid_symmetry", err, 1e-15 + 1e-300)


@check("N3_rng_determinism", "numerics", "same seed gives the same stream")
def _n3():
    a, b = N.seeded_rng(7), N.seeded_rng(7)
    same = np.array_equal(a.uniform(size=1000), b.uniform(size=1000)) and np.array_equal(
        a.permutation(50), b.permutation(50)
    )
    return _result("N3_rng_determinism", 0.0 if same else 1.0, 0.5)


# -- losses -----------------------------------------------------------------------------


def _grid():
    q = np.linspace(0.0, 1.0, 101)
    return q, np.array([0.0, 1.0])


@check("I1_al_gamma0_is_bce", "losses", "AL with both gammas 0 equals BCE")
def _i1():
    rng = N.seeded_rng(2)
    q = rng.uniform(size=(2000, 5))
    p = np.eye(5)[rng.integers(5, size=2000)]
    err = 0.0
    for mode in L.AnchorMode:
        cfg = L.AnchorLossConfig(0.0, 0.0, anchor_mode=mode, static_anchor=0.3)
        err = max(err, np.abs(L.anchor_loss(p, q, cfg).per_class - L.bce(p, q).per_class).max())
    return _result("I1_al_gamma0_is_bce", err, 1e-12)


@check("I2_al_focal_equivalent", "losses", "AL with q* = 1 - p equals focal loss")
def _i2():
    q = np.linspace(0.0, 1.0, 101)
    err = 0.0
    for g in (0.5, 1.0, 2.0):
        cfg = L.AnchorLossConfig(g, g, anchor_mode=L.AnchorMode.FOCAL_EQUIVALENT)
        for label in (0.0, 1.0):
            p = np.full_like(q, label)[:, None]
            a = L.anchor_loss(p, q[:, None], cfg).value
            f = L.focal_loss(p, q[:, None], g).value
            err = max(err, np.abs(a - f).max())
    return _result("I2_al_focal_equivalent", err, 1e-12)


@check("I3_moderate_case_is_bce", "losses", "background AL equals BCE when q = q_neg")
def _i3():
    q = np.linspace(0.01, 0.99, 99)
    err = 0.0
    for g in (0.5, 1.0, 2.0, 5.0):
        cfg = L.AnchorLossConfig(0.0, g, anchor_mode=L.AnchorMode.STATIC)
        p = np.zeros((len(q), 1))
        anchors = L.Anchors(None, q[:, None])
        al = L.anchor_loss(p, q[:, None], cfg, anchors).per_class
        err = max(err, np.abs(al - L.bce(p, q[:, None]).per_class).max())
    return _result("I3_moderate_case_is_bce", err, 1e-12)


@check("O1_ordering_vs_bce", "losses", "background AL > BCE iff q > q_neg")
def _o1():
    q = np.linspace(0.01, 0.99, 99)
    bad = 0
    for qn in np.linspace(0.05, 0.95, 19):
        for g in (0.5, 1.0, 2.0):
            cfg = L.AnchorLossConfig(0.0, g, anchor_mode=L.AnchorMode.STATIC, static_anchor=float(qn))
            p = np.zeros((len(q), 1))
            diff = L.anchor_loss(p, q[:, None], cfg).value - L.bce(p, q[:, None]).value
            above = q > qn + 1e-12
            below = q < qn - 1e-12
            bad += int(np.sum(above & ~(diff > 0)) + np.sum(below & ~(diff < 0)))
    return _result("O1_ordering_vs_bce", float(bad), 0.5, f"{bad} ordering violations")


@check("G1_gradient_magnitude", "losses", "|dAL/dq| > |dBCE/dq| for background q > q_neg, gamma >= 1")
def _g1():
    q = np.linspace(0.01, 0.99, 99)
    bad = 0
    for qn in (0.1, 0.5, 0.9):
        for g in (1.0, 2.0, 5.0):
            cfg = L.AnchorLossConfig(0.0, g, anchor_mode=L.AnchorMode.STATIC, static_anchor=qn)
            p = np.zeros((len(q), 1))
            ga = np.abs(L.anchor_loss_gradient(p, q[:, None], cfg)[:, 0])
            gb = np.abs(L.bce_gradient(p, q[:, None])[:, 0])
            sel = q > qn
            bad += int(np.sum(~(ga[sel] > gb[sel])))
    return _result("G1_gradient_magnitude", float(bad), 0.5, f"{bad} violations")


@check("G2_gradient_fd_oracle", "losses", "analytic gradients match central differences (anchors frozen)")
def _g2():
    worst = loss_gradient_errors(n_probes=400, seed=3)
    err = max(worst.values())
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
    return _result("G2_gradient_fd_oracle", err, 1e-6, detail)


@check("M1_modulator_monotone", "losses", "(1 + q - q_neg)^g is nondecreasing in q")
def _m1():
    q = np.linspace(0.0, 1.0, 1001)
    worst = 0.0
    for qn in np.linspace(0, 1, 11):
        for g in (0.0, 0.5, 1.0, 2.0, 5.0):
            mod = np.maximum(1.0 + q - qn, 0.0) ** g
            worst = max(worst, float(np.max(-np.diff(mod), initial=0.0)))
    return _result("M1_modulator_monotone", worst, 1e-15)


@check("L1_nonnegative", "losses", "every loss value is >= 0 after clamping")
def _l1():
    rng = N.seeded_rng(4)
    q = rng.uniform(size=(3000, 4))
    q[::7] = 0.0
    q[1::7] = 1.0
    p = np.eye(4)[rng.integers(4, size=3000)]
    worst = 0.0
    for i in range(20):
        cfg = random_anchor_config(rng)
        worst = min(worst, float(L.anchor_loss(p, q, cfg).value.min()))
    worst = min(worst, float(L.bce(p, q).value.min()), float(L.focal_loss(p, q, 2.0).value.min()))
    return _result("L1_nonnegative", -worst, 1e-300, passed=worst >= 0.0)


# -- heatmap ----------------------------------------------------------------------------


@check("H1_pose_gamma0_is_bce", "heatmap", "pose AL with gamma 0 equals the BCE pixel sum")
def _h1():
    rng = N.seeded_rng(5)
    err = 0.0
    for _ in range(50):
        target, pred = _random_heatmap_pair(rng, 9, 9)
        a = HM.pose_anchor_loss(target, pred, HM.PoseLossConfig(gamma=0.0)).value
        err = max(err, abs(a - L.bce(target.ravel(), pred.ravel()).value))
    return _result("H1_pose_gamma0_is_bce", err, 1e-12)


@check("H2_modulation_locality", "heatmap", "masked and unmasked pixel contributions do not interact")
def _h2():
    rng = N.seeded_rng(6)
    err = 0.0
    cfg = HM.PoseLossConfig(gamma=2.0)
    for _ in range(50):
        target, pred = _random_heatmap_pair(rng, 9, 9)
        mask = HM.background_mask(target) == 1.0
        base = HM.pose_anchor_loss(target, pred, cfg).per_class
        # change a masked pixel: unmasked contributions stay put
        r, c = np.argwhere(mask)[rng.integers(mask.sum())]
        p2 = pred.copy()
        p2[r, c] = rng.uniform(0.01, 0.99)
        out = HM.pose_anchor_loss(target, p2, cfg).per_class
        err = max(err, np.abs(out[~mask] - base[~mask]).max())
        # change an unmasked pixel with the anchor frozen: masked contributions stay put
        anchor = HM.select_anchor(target, N.clamp_probability(pred))
        r, c = np.argwhere(~mask)[rng.integers((~mask).sum())]
        p3 = pred.copy()
        p3[r, c] = rng.uniform(0.01, 0.99)
        out = HM.pose_anchor_loss(target, p3, cfg, anchor).per_class
        err = max(err, np.abs(out[mask] - base[mask]).max())
    return _result("H2_modulation_locality", err, 1e-300, passed=err == 0.0)


@check("H3_select_anchor_bruteforce", "heatmap", "select_anchor equals a brute-force max")
def _h3():
    rng = N.seeded_rng(7)
    bad = 0
    for _ in range(200):
        target, pred = _random_heatmap_pair(rng, 8, 8)
        best = None
        for r in range(8):
            for c in range(8):
                if target[r, c] > 0.5 and (best is None or pred[r, c] > best):
                    best = pred[r, c]
        bad += HM.select_anchor(target, pred) != best
    return _result("H3_select_anchor_bruteforce", float(bad), 0.5, f"{bad} mismatches")


@check("H4_pose_gradient_fd", "heatmap", "pose AL gradient matches FD with q* frozen")
def _h4():
    rng = N.seeded_rng(8)
    err = 0.0
    for _ in range(20):
        target, pred = _random_heatmap_pair(rng, 6, 6)
        cfg = HM.PoseLossConfig(gamma=float(rng.uniform(0, 4)))
        anchor = HM.select_anchor(target, N.clamp_probability(pred))
        fd = N.termwise_difference_gradient(
            lambda x: HM.pose_anchor_loss(target, x, cfg, anchor).per_class, pred, N.probability_fd_steps(pred)
        )
        err = max(err, N.relative_error(HM.pose_anchor_loss_gradient(target, pred, cfg, anchor), fd).max())
    return _result("H4_pose_gradient_fd", err, 1e-6)


@check("H5_gaussian_reflection", "heatmap", "reflecting the keypoint reflects the target exactly")
def _h5():
    rng = N.seeded_rng(9)
    err = 0.0
    H, W = 16, 20
    for _ in range(50):
        a = HM.KeypointAnnotation(float(rng.uniform(0, W - 1)), float(rng.uniform(0, H - 1)), True, float(rng.uniform(0.5, 3)))
        base = HM.encode_gaussian(a, H, W).values
        lr = HM.encode_gaussian(HM.KeypointAnnotation(W - 1 - a.x, a.y, True, a.sigma), H, W).values
        ud = HM.encode_gaussian(HM.KeypointAnnotation(a.x, H - 1 - a.y, True, a.sigma), H, W).values
        err = max(err, np.abs(lr - base[:, ::-1]).max(), np.abs(ud - base[::-1, :]).max())
    return _result("H5_gaussian_reflection", err, 1e-12)


# -- model ------------------------------------------------------------------------------


def _flat(arrays):
    return np.concatenate([a.ravel() for a in arrays])


def _unflat(vec, like):
    out, i = [], 0
    for a in like:
        out.append(vec[i : i + a.size].reshape(a.shape))
        i += a.size
    return out


def model_gradient_error(kind: str, pose: bool = False, seed: int = 0, anchor_mode=None) -> tuple[float, int]:
    """End-to-end FD check of the parameter gradient for one loss kind.

    Classification uses a 3-4-2 dense net (26 parameters); pose uses a
    single-level conv net (39 parameters) on 12x12 images. Anchors are frozen
    at the base point and biases are drawn away from zero so no ReLU sits
    on its kink.

    Returns:
        ``(max relative error, parameter count)``.
    """
    kind = T.LossKind(kind)
    rng = N.seeded_rng(seed)
    if pose:
        model = M.ConvHeatmapModel(1, channels=(2,), bottleneck_convs=0, rng=rng)
        ds = D.gen_symmetric_keypoints(int(rng.integers(1 << 30)), n=3, height=12, width=12, pair_distance=4.0, sigma=0.8)
        x = ds.images
        targets = T.encode_targets(ds)[:, :1]
        visible = ds.visible[:, :1]
        loss_cfg = HM.PoseLossConfig(gamma=2.0)
    else:
        model = M.DenseModel.init([3, 4, 2], rng)
        x = rng.normal(size=(4, 3))
        onehot = np.eye(2)[[0, 1, 1, 0]]
        loss_cfg = L.AnchorLossConfig(1.0, 2.0, 0.05, anchor_mode or L.AnchorMode.DYNAMIC_TARGET, 0.4)
    model.set_params([p if p.ndim > 1 else rng.uniform(0.05, 0.2, size=p.shape) for p in model.params()])
    config = T.TrainConfig(loss_kind=kind, loss_cfg=loss_cfg, focal_gamma=1.5)
    head = "softmax" if kind is T.LossKind.CE else "sigmoid"
    probs, cache = model.forward(x, head)

    if pose and kind is T.LossKind.AL_POSE:
        frozen = HM.pose_anchor_loss_batch(targets, probs, loss_cfg, visible)[2]

        def objective(q, logits):
            per_map, grad, _ = HM.pose_anchor_loss_batch(targets, q, loss_cfg, visible, frozen)
            return per_map.sum(axis=1), grad, "probs"

    elif pose:

        def objective(q, logits):
            return T.pose_objective(kind, config, q, targets, visible)

    elif kind is T.LossKind.AL:
        frozen = L.anchor_probabilities(onehot, probs, loss_cfg)

        def objective(q, logits):
            grad = L.anchor_loss_gradient(onehot, q, loss_cfg, frozen)
            return L.anchor_loss(onehot, q, loss_cfg, frozen).value, grad, "probs"

    else:

        def objective(q, logits):
            return T.classification_objective(kind, config, q, logits, onehot)

    _, grad, wrt = objective(probs, cache.logits)
    analytic = _flat(model.backward(cache, grad / len(x), wrt))
    saved = [p.copy() for p in model.params()]

    def f(theta):
        model.set_params(_unflat(theta, saved))
        q, c = model.forward(x, head)
        return float(np.mean(objective(q, c.logits)[0]))

    try:
        fd = N.finite_difference_gradient(f, _flat(saved))
    finally:
        model.set_params(saved)
    return float(N.relative_error(analytic, fd, abs_floor=1e-12).max()), model.num_params()


E2E_KINDS = [("CE", False), ("BCE", False), ("FL", False), ("AL", False), ("BCE", True), ("FL", True), ("AL_pose", True), ("MSE", True)]


@check("E1_end_to_end_gradient", "model", "full-model parameter gradients match FD for every loss kind")
def _e1():
    worst = 0.0
    parts = []
    for kind, pose in E2E_KINDS:
        if kind == "AL":
            err = max(model_gradient_error(kind, False, 11, mode)[0] for mode in L.AnchorMode)
        else:
            err = model_gradient_error(kind, pose, 11)[0]
        worst = max(worst, err)
        parts.append(f"{'pose-' if pose else ''}{kind}={err:.1e}")
    return _result("E1_end_to_end_gradient", worst, 1e-5, ", ".join(parts))


def _tiny_run(**kw):
    ds = D.gen_confusable_blobs(0, n_per_class=20, pairs=2)
    model = M.DenseModel.init([ds.features.shape[1], 4], N.seeded_rng(3))
    cfg = T.TrainConfig(**{"loss_kind": "AL", "lr": 0.05, "epochs": 4, "batch_size": 16, **kw})
    return T.train(model, ds, cfg)


@check("E2_training_determinism", "model", "identical config and seed give identical traces")
def _e2():
    a, b = _tiny_run(), _tiny_run()
    same = a.to_json() == b.to_json()
    return _result("E2_training_determinism", 0.0 if same else 1.0, 0.5)


@check("E3_ohem_rho1_is_plain", "model", "OHEM with rho = 1 reproduces plain training")
def _e3():
    a, b = _tiny_run(), _tiny_run(ohem_ratio=1.0)
    same = a.trace == b.trace and a.checksum == b.checksum
    return _result("E3_ohem_rho1_is_plain", 0.0 if same else 1.0, 0.5)


@check("E4_warmup_schedule", "model", "epoch loss kinds follow loss_for_epoch")
def _e4():
    run = _tiny_run(warmup_epochs=2)
    cfg = T.TrainConfig(loss_kind="AL", warmup_epochs=2, epochs=4)
    bad = sum(r.loss_kind != T.loss_for_epoch(r.epoch, cfg).value for r in run.trace)
    return _result("E4_warmup_schedule", float(bad), 0.5, f"{bad} mislabeled epochs")


# -- data -------------------------------------------------------------------------------


@check("D1_parser_round_trip", "data", "CIFAR-10 and IDX files round-trip byte for byte")
def _d1():
    rng = N.seeded_rng(12)
    raw = bytearray(rng.integers(0, 256, size=5 * D.CIFAR_RECORD, dtype=np.uint8).tobytes())
    for i in range(5):
        raw[i * D.CIFAR_RECORD] = int(rng.integers(10))
    raw = bytes(raw)
    idx_arr = rng.integers(0, 256, size=(3, 4, 5), dtype=np.uint8)
    idx_raw = D.idx_to_bytes(idx_arr)
    ok = D.cifar10_to_bytes(D.parse_cifar10_bytes(raw)) == raw and D.idx_to_bytes(D.parse_idx_bytes(idx_raw)) == idx_raw
    return _result("D1_parser_round_trip", 0.0 if ok else 1.0, 0.5)


@check("D2_generator_purity", "data", "generators are pure functions of seed and parameters")
def _d2():
    a = D.gen_confusable_blobs(5, n_per_class=10, pairs=2, confusion_overlap=0.5)
    b = D.gen_confusable_blobs(5, n_per_class=10, pairs=2, confusion_overlap=0.5)
    c = D.gen_symmetric_keypoints(5, n=4)
    d = D.gen_symmetric_keypoints(5, n=4)
    ok = (
        np.array_equal(a.features, b.features)
        and np.array_equal(a.labels, b.labels)
        and np.array_equal(c.images, d.images)
        and np.array_equal(c.keypoints, d.keypoints)
    )
    return _result("D2_generator_purity", 0.0 if ok else 1.0, 0.5)


@check("D3_split_partition", "data", "splits are disjoint and exhaustive")
def _d3():
    ds = D.gen_confusable_blobs(1, n_per_class=37, pairs=3)
    tagged = D.ClassificationDataset(np.arange(len(ds))[:, None].astype(float), ds.labels, ds.num_classes)
    tr, va = D.split(tagged, 0.23, 4)
    ids = np.concatenate([tr.features[:, 0], va.features[:, 0]])
    ok = len(set(tr.features[:, 0]) & set(va.features[:, 0])) == 0 and np.array_equal(np.sort(ids), np.arange(len(ds)))
    return _result("D3_split_partition", 0.0 if ok else 1.0, 0.5)


# -- runner -----------------------------------------------------------------------------


def run_checks(names=None) -> dict:
    """Run the registered checks and build the JSON-serialisable report."""
    results = []
    for name, (module, _, fn) in REGISTRY.items():
        if names is not None and name not in names:
            continue
        try:
            res = fn()
        except Exception as exc:  # a crashing check is a failing check
            res = CheckResult(name, module, False, None, None, f"{type(exc).__name__}: {exc}")
        results.append(res)
    failed = [r.name for r in results if not r.passed]
    return {
        "passed": not failed,
        "summary": {"total": len(results), "failed": failed},
        "checks": [asdict(r) for r in results],
    }
