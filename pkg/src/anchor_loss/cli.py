"""``anchor-loss`` command line: loss surfaces, verification, training and ablations.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.
The default output directory comes from ``$ANCHOR_LOSS_OUT`` (else ``./runs``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import losses as L
from . import verify as V
from .data import ParseError
from .experiments import ABLATION_AXES, SpecError, ablate, run_experiment, validate_spec
from .numerics import EPS, OracleError
from .training import TrainingDiverged

logger = logging.getLogger("anchor_loss")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "ANCHOR_LOSS_OUT"
SURFACE_LOSSES = ("AL", "FL", "CE")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


# -- loss surfaces ----------------------------------------------------------------------


def probability_grid(step: float, floor: float = EPS) -> np.ndarray:
    """Points ``0, step, 2 step, ...`` up to 1, clamped to ``[floor, 1 - floor]``."""
    if not 0.0 < step <= 0.1:
        raise CliError(f"--step must lie in (0, 0.1], got {step}", EXIT_VALIDATION)
    n = int(math.floor(1.0 / step + 1e-9))
    q = np.arange(n + 1) * step
    if q[-1] < 1.0 - 1e-12:
        q = np.append(q, 1.0)
    return np.clip(q, floor, 1.0 - floor)


def surface_columns(loss: str, gamma: float, anchor, q: np.ndarray, label: float = 0.0) -> dict:
    """Loss and gradient curves for one configuration plus the CE and FL references.

    ``anchor`` is a probability (a static anchor on both terms) or the string
    ``"focal"`` for the focal-equivalent anchors; it is ignored for CE and FL.
    """
    p = np.full((len(q), 1), float(label))
    qq = q[:, None]
    ce, ce_g = L.bce(p, qq).value, L.bce_gradient(p, qq)[:, 0]
    fl, fl_g = L.focal_loss(p, qq, gamma).value, L.focal_loss_gradient(p, qq, gamma)[:, 0]
    if loss == "CE":
        val, grad = ce, ce_g
    elif loss == "FL":
        val, grad = fl, fl_g
    else:
        if anchor == "focal":
            cfg = L.AnchorLossConfig(gamma, gamma, anchor_mode=L.AnchorMode.FOCAL_EQUIVALENT)
        else:
            cfg = L.AnchorLossConfig(gamma, gamma, anchor_mode=L.AnchorMode.STATIC, static_anchor=float(anchor))
        val, grad = L.anchor_loss(p, qq, cfg).value, L.anchor_loss_gradient(p, qq, cfg)[:, 0]
    return {"q": q, "loss": val, "gradient": grad, "ce_loss": ce, "ce_gradient": ce_g, "fl_loss": fl, "fl_gradient": fl_g}


def surface_filename(loss: str, gamma: float, anchor) -> str:
    tag = "none" if loss != "AL" else ("focal" if anchor == "focal" else f"{float(anchor):g}")
    return f"{loss}_gamma{gamma:g}_anchor{tag}.csv"


def write_columns(path: Path, columns: dict) -> None:
    names = list(columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in zip(*(columns[n] for n in names)):
            writer.writerow([repr(float(v)) for v in row])


def _anchor_arg(text: str):
    if text == "focal":
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"anchor must be a probability or 'focal', got {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"anchor must lie in [0, 1], got {value}")
    return value


def cmd_loss_surface(args) -> int:
    q = probability_grid(args.step)
    out = Path(args.out) if args.out else default_out_dir() / "loss_surface"
    anchors = args.anchor if args.loss == "AL" else [None]
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for gamma in args.gamma:
            for anchor in anchors:
                path = out / surface_filename(args.loss, gamma, anchor)
                write_columns(path, surface_columns(args.loss, gamma, anchor, q, args.label))
                written.append(path)
    except OSError as exc:
        raise CliError(f"cannot write loss surface: {exc}", EXIT_IO) from None
    for path in written:
        print(path)
    return EXIT_OK


# -- verify -----------------------------------------------------------------------------


def cmd_verify(args) -> int:
    report = V.run_checks()
    jsonschema.validate(report, V.REPORT_SCHEMA)
    for c in report["checks"]:
        err = "n/a" if c["max_error"] is None else f"{c['max_error']:.3e}"
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']:<32} max_error={err} {c['detail']}")
    if args.json:
        try:
            Path(args.json).parent.mkdir(parents=True, exist_ok=True)
            Path(args.json).write_text(json.dumps(report, indent=2) + "\n")
        except OSError as exc:
            raise CliError(f"cannot write report: {exc}", EXIT_IO) from None
    if not report["passed"]:
        print("failed checks: " + ", ".join(report["summary"]["failed"]), file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


# -- train / ablate ---------------------------------------------------------------------


def load_spec(path) -> dict:
    try:
        spec = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read spec: {exc}", EXIT_IO) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON: {exc}", EXIT_VALIDATION) from None
    validate_spec(spec)
    return spec


def run_dir(spec: dict, out: str | None) -> Path:
    base = Path(out) if out else Path(spec["output_dir"]) if "output_dir" in spec else default_out_dir()
    return base / spec["name"]


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    spec = load_spec(args.spec)
    run = run_experiment(spec, args.seed)
    target = run_dir(spec, args.out)
    if args.seed is not None:
        target = target / f"seed{args.seed}"
    try:
        target.mkdir(parents=True, exist_ok=True)
        (target / "run.json").write_text(run.to_json() + "\n")
        (target / "run.csv").write_text(run.to_csv())
        _dump_json(target / "summary.json", {"checksum": run.checksum, **run.extra})
    except OSError as exc:
        raise CliError(f"cannot write run files: {exc}", EXIT_IO) from None
    final = run.extra.get("final", {})
    print(f"{spec['name']}: {json.dumps(final, sort_keys=True)}")
    print(target)
    return EXIT_OK


ABLATION_FIELDS = ("axis", "value", "mean_top1", "std_top1", "mean_top5", "std_top5", "mean_val_loss", "seeds", "top1")


def cmd_ablate(args) -> int:
    spec = load_spec(args.spec)
    rows, summary = ablate(spec, args.axis)
    target = run_dir(spec, args.out)
    stem = "ablation_" + "_".join(args.axis)
    try:
        target.mkdir(parents=True, exist_ok=True)
        with open(target / f"{stem}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(ABLATION_FIELDS)
            for r in rows:
                writer.writerow(
                    [r.axis, r.value, repr(r.mean_top1), repr(r.std_top1), repr(r.mean_top5), repr(r.std_top5),
                     repr(r.mean_val_loss), " ".join(map(str, r.seeds)), " ".join(repr(float(v)) for v in r.top1)]
                )
        _dump_json(target / f"{stem}_summary.json", summary)
    except OSError as exc:
        raise CliError(f"cannot write ablation files: {exc}", EXIT_IO) from None
    for r in rows:
        print(f"{r.axis}={r.value}: top1 {r.mean_top1:.4f} +/- {r.std_top1:.4f}")
    if summary:
        print(f"dynamic_not_worse={summary['dynamic_not_worse']}")
    print(target / f"{stem}.csv")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchor-loss", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("loss-surface", help="dump loss and gradient curves to CSV")
    s.add_argument("--loss", choices=SURFACE_LOSSES, default="AL")
    s.add_argument("--gamma", type=float, nargs="+", default=[2.0])
    s.add_argument("--anchor", type=_anchor_arg, nargs="+", default=[0.5], help="anchor probabilities or 'focal'")
    s.add_argument("--step", type=float, default=0.01)
    s.add_argument("--label", type=float, choices=(0.0, 1.0), default=0.0, help="0 for the background curve")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_loss_surface)

    s = sub.add_parser("verify", help="run every registered invariant check")
    s.add_argument("--json", help="write the JSON report here")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("train", help="train one experiment spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output root (overrides the spec and $%s)" % OUT_ENV)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("ablate", help="sweep ablation axes over the spec's seeds")
    s.add_argument("--spec", required=True)
    s.add_argument("--axis", choices=ABLATION_AXES, action="append", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (SpecError, jsonschema.ValidationError) as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingDiverged, OracleError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ParseError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
