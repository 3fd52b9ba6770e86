"""JSON experiment specs: validation, single runs and ablation sweeps."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass

import jsonschema
import numpy as np

from . import data as D
from .heatmap import PoseLossConfig, peak_analysis
from .losses import AnchorLossConfig, AnchorMode
from .model import ConvHeatmapModel, DenseModel
from .numerics import seeded_rng
from .training import LossKind, TrainConfig, TrainRun, _evaluate, _Task, train

logger = logging.getLogger(__name__)

_NUM = {"type": "number"}
_INT = {"type": "integer"}

EXPERIMENT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "dataset", "train"],
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "seed": _INT,
        "output_dir": {"type": "string"},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["confusable_blobs", "symmetric_keypoints", "cifar10"]},
                "seed": _INT,
                "params": {"type": "object"},
                "val_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "path": {"type": "string"},
                "val_path": {"type": "string"},
                "standardize": {"type": "boolean"},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "channels": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "bottleneck_convs": {"type": "integer", "minimum": 0},
                "head_bias": _NUM,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "required": ["loss_kind"],
            "properties": {
                "loss_kind": {"enum": [k.value for k in LossKind]},
                "gamma": {"type": "number", "minimum": 0},
                "gamma_target": {"type": "number", "minimum": 0},
                "gamma_background": {"type": "number", "minimum": 0},
                "margin": {"type": "number", "minimum": 0},
                "anchor_mode": {"enum": [m.value for m in AnchorMode]},
                "static_anchor": {"type": "number", "minimum": 0, "maximum": 1},
                "anchor_threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "focal_gamma": {"type": "number", "minimum": 0},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "lr_schedule": {
                    "type": "array",
                    "items": {"type": "array", "prefixItems": [_INT, _NUM], "minItems": 2, "maxItems": 2},
                },
                "warmup_epochs": {"type": "integer", "minimum": 0},
                "ohem_ratio": {"type": ["number", "null"], "exclusiveMinimum": 0, "maximum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "epochs": {"type": "integer", "minimum": 0},
                "momentum": {"type": "number", "minimum": 0, "maximum": 1},
                "hflip": {"type": "boolean"},
                "pck_alpha": {"type": "number", "exclusiveMinimum": 0},
                "pck_scale": {"type": "number", "exclusiveMinimum": 0},
                "min_peak": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "ablation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seeds": {"type": "array", "items": _INT, "minItems": 1},
                "gamma": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "anchor_mode": {"type": "array", "items": {"enum": [m.value for m in AnchorMode]}},
                "static_anchor": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                "ohem_rho": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
            },
        },
    },
}

ABLATION_AXES = ("gamma", "anchor_mode", "static_anchor", "ohem_rho")


class SpecError(ValueError):
    pass


def validate_spec(spec: dict) -> dict:
    try:
        jsonschema.validate(spec, EXPERIMENT_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SpecError(f"{where}: {exc.message}") from None
    kind = LossKind(spec["train"]["loss_kind"])
    pose = spec["dataset"]["kind"] == "symmetric_keypoints"
    if pose and kind is LossKind.AL:
        raise SpecError("train/loss_kind: use AL_pose for keypoint datasets")
    if not pose and kind in (LossKind.AL_POSE, LossKind.MSE):
        raise SpecError(f"train/loss_kind: {kind.value} needs a keypoint dataset")
    return spec


def build_datasets(spec: dict):
    """``(train, val)`` datasets described by the spec."""
    ds = spec["dataset"]
    seed = ds.get("seed", spec.get("seed", 0))
    params = dict(ds.get("params", {}))
    frac = ds.get("val_fraction", 0.2)
    if ds["kind"] == "confusable_blobs":
        full = D.gen_confusable_blobs(seed, **params)
    elif ds["kind"] == "symmetric_keypoints":
        full = D.gen_symmetric_keypoints(seed, **params)
    else:
        if "path" not in ds:
            raise SpecError("dataset/path: required for cifar10")
        full = D.parse_cifar10_binary(ds["path"])
        if "val_path" in ds:
            train_ds, val_ds = full, D.parse_cifar10_binary(ds["val_path"])
            val_ds.split = "val"
            return _maybe_standardize(ds, train_ds, val_ds)
    train_ds, val_ds = D.split(full, frac, seed)
    return _maybe_standardize(ds, train_ds, val_ds)


def _maybe_standardize(ds, train_ds, val_ds):
    if ds.get("standardize") and isinstance(train_ds, D.ClassificationDataset):
        train_ds, mean, std = D.standardize(train_ds)
        val_ds, _, _ = D.standardize(val_ds, mean, std)
    return train_ds, val_ds


def build_model(spec: dict, dataset, seed: int):
    m = spec.get("model", {})
    rng = seeded_rng(seed)
    if isinstance(dataset, D.PoseDataset):
        return ConvHeatmapModel(
            dataset.num_keypoints,
            channels=tuple(m.get("channels", (8, 16, 16))),
            bottleneck_convs=m.get("bottleneck_convs", 1),
            rng=rng,
            head_bias=m.get("head_bias", -4.0),
        )
    sizes = [dataset.features.shape[1], *m.get("hidden", []), dataset.num_classes]
    return DenseModel.init(sizes, rng, head="sigmoid")


def build_train_config(spec: dict, seed: int) -> TrainConfig:
    t = dict(spec["train"])
    kind = LossKind(t.pop("loss_kind"))
    t.pop("min_peak", None)
    if kind is LossKind.AL_POSE:
        loss_cfg = PoseLossConfig(
            gamma=t.pop("gamma", 2.0),
            anchor_threshold=t.pop("anchor_threshold", 0.5),
        )
        for key in ("gamma_target", "gamma_background", "margin", "anchor_mode", "static_anchor"):
            t.pop(key, None)
    else:
        gamma = t.pop("gamma", None)
        mode = AnchorMode(t.pop("anchor_mode", AnchorMode.DYNAMIC_TARGET.value))
        loss_cfg = AnchorLossConfig(
            gamma_target=t.pop("gamma_target", 0.0),
            gamma_background=t.pop("gamma_background", 0.5 if gamma is None else gamma),
            margin=t.pop("margin", 0.05),
            anchor_mode=mode,
            static_anchor=t.pop("static_anchor", 0.5),
        )
        t.pop("anchor_threshold", None)
    if "lr_schedule" in t:
        t["lr_schedule"] = [tuple(x) for x in t["lr_schedule"]]
    return TrainConfig(loss_kind=kind, loss_cfg=loss_cfg, seed=seed, **t)


def pose_peak_summary(model, dataset: D.PoseDataset, radius: float, min_peak: float = 0.25) -> dict:
    """Double-counting statistics of the model's heatmaps on ``dataset``."""
    probs, _ = model.forward(dataset.images)
    n_maps = double = double_correct = correct = 0
    for i in range(len(dataset)):
        for k in range(dataset.num_keypoints):
            if not dataset.visible[i, k]:
                continue
            stats = peak_analysis(probs[i, k], dataset.annotation(i, k), radius, min_peak)
            n_maps += 1
            correct += stats.nearest_peak_correct
            if stats.is_double:
                double += 1
                double_correct += stats.nearest_peak_correct
    return {
        "heatmaps": n_maps,
        "double_count": double,
        "double_ratio": double / n_maps if n_maps else float("nan"),
        "correct_when_double": double_correct / double if double else float("nan"),
        "peak_correct_ratio": correct / n_maps if n_maps else float("nan"),
        "min_peak": min_peak,
        "radius": radius,
    }


def run_experiment(spec: dict, seed: int | None = None) -> TrainRun:
    """Build data and model from ``spec``, train, and attach a final summary."""
    validate_spec(spec)
    seed = spec.get("seed", 0) if seed is None else seed
    train_ds, val_ds = build_datasets(spec)
    model = build_model(spec, train_ds, seed)
    config = build_train_config(spec, seed)
    extra = {"name": spec["name"], "seed": seed, "num_params": model.num_params()}
    if isinstance(train_ds, D.PoseDataset):
        task = _Task(val_ds, config)
        _, before = _evaluate(model, task, config.loss_kind)
        extra["untrained_val_pck"] = before["pck"]
    run = train(model, train_ds, config, val_ds)
    if isinstance(train_ds, D.PoseDataset):
        scale = config.pck_scale or _Task(val_ds, config).scale
        min_peak = spec["train"].get("min_peak", 0.25)
        extra["peaks"] = pose_peak_summary(model, val_ds, config.pck_alpha * scale, min_peak)
    if run.trace:
        last = run.trace[-1]
        extra["final"] = {k: v for k, v in vars(last).items() if v is not None}
    run.extra = extra
    return run


# -- ablations -------------------------------------------------------------------------------


@dataclass
class AblationRow:
    axis: str
    value: object
    mean_top1: float
    std_top1: float
    mean_top5: float
    std_top5: float
    mean_val_loss: float
    seeds: list
    top1: list
    checksums: list


def _variant(spec: dict, axis: str, value) -> dict:
    s = copy.deepcopy(spec)
    t = s["train"]
    gamma = t.get("gamma_background", t.get("gamma", 0.5))
    if axis == "gamma":
        t.update(loss_kind="AL", anchor_mode="dynamic_target", gamma_target=0.0, gamma_background=value)
    elif axis == "static_anchor":
        t.update(loss_kind="AL", anchor_mode="static", static_anchor=value, gamma_target=0.0, gamma_background=gamma)
    elif axis == "anchor_mode":
        mode = AnchorMode(value)
        gt, gb = {
            AnchorMode.DYNAMIC_MAX_BACKGROUND: (gamma, 0.0),
            AnchorMode.DYNAMIC_TARGET: (0.0, gamma),
            AnchorMode.DYNAMIC_BOTH: (gamma, gamma),
            AnchorMode.FOCAL_EQUIVALENT: (gamma, gamma),
            AnchorMode.STATIC: (0.0, gamma),
        }[mode]
        t.update(loss_kind="AL", anchor_mode=mode.value, gamma_target=gt, gamma_background=gb)
    elif axis == "ohem_rho":
        t["ohem_ratio"] = value
    else:
        raise SpecError(f"unknown ablation axis {axis!r}")
    t.pop("gamma", None)
    return s


def ablate(spec: dict, axes) -> tuple[list[AblationRow], dict]:
    """One row per (axis, value): final validation metrics over the spec's seeds.

    Returns the rows and a summary including the dynamic-vs-static check
    when both the ``gamma`` and ``static_anchor`` axes were run.
    """
    validate_spec(spec)
    if isinstance(axes, str):
        axes = [axes]
    abl = spec.get("ablation", {})
    seeds = abl.get("seeds", [0, 1, 2])
    rows = []
    for axis in axes:
        if axis not in ABLATION_AXES:
            raise SpecError(f"unknown ablation axis {axis!r}")
        values = abl.get(axis)
        if not values:
            raise SpecError(f"ablation/{axis}: no values enumerated")
        for value in values:
            variant = _variant(spec, axis, value)
            runs = [run_experiment(variant, seed) for seed in seeds]
            finals = [r.trace[-1] for r in runs]
            top1 = [f.val_top1 if f.val_top1 is not None else f.val_pck for f in finals]
            top5 = [f.val_top5 if f.val_top5 is not None else f.val_pck for f in finals]
            rows.append(
                AblationRow(
                    axis,
                    value,
                    float(np.mean(top1)),
                    float(np.std(top1)),
                    float(np.mean(top5)),
                    float(np.std(top5)),
                    float(np.mean([f.val_loss for f in finals])),
                    list(seeds),
                    top1,
                    [r.checksum for r in runs],
                )
            )
            logger.info("%s=%s top1 %.4f +/- %.4f", axis, value, rows[-1].mean_top1, rows[-1].std_top1)
    return rows, _directional_check(spec, rows)


def _directional_check(spec, rows) -> dict:
    dynamic = [r for r in rows if r.axis == "gamma"]
    static = [r for r in rows if r.axis == "static_anchor"]
    if not dynamic or not static:
        return {}
    t = spec["train"]
    base_gamma = t.get("gamma_background", t.get("gamma", 0.5))
    dyn = next((r for r in dynamic if math.isclose(r.value, base_gamma)), dynamic[0])
    best_static = max(static, key=lambda r: r.mean_top1)
    tol = max(dyn.std_top1, best_static.std_top1)
    passed = dyn.mean_top1 >= best_static.mean_top1 - tol
    if not passed:
        logger.warning(
            "dynamic anchor (gamma=%s) %.4f underperforms best static (q*=%s) %.4f by more than %.4f",
            dyn.value, dyn.mean_top1, best_static.value, best_static.mean_top1, tol,
        )
    return {
        "dynamic_gamma": dyn.value,
        "dynamic_mean_top1": dyn.mean_top1,
        "best_static_anchor": best_static.value,
        "best_static_mean_top1": best_static.mean_top1,
        "tolerance": tol,
        "dynamic_not_worse": bool(passed),
    }
