"""Command-line interface.

Subcommands: eval, sweep, calibrate fit, calibrate apply, bandwidth, synth,
layer-sharpness.  Exit codes: 0 success, 2 input error, 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import calibrate as cal
from .bregman import BINARY_COUNTERPART, get_generator
from .errors import InputError, InvariantViolation, ParseError
from .estimators import (
    _decompose_arrays,
    binned_classwise_ce1,
    binned_toplabel_ece,
    classwise_decompose,
    cond_expectation,
    decompose,
    layer_sharpness,
)
from .io import load_features, load_predictions, write_matrix_csv, write_predictions
from .kernels import DEFAULT_GRID, Binning, Dirichlet, loo_log_likelihood, resolve_kernel
from .simplex import EPS
from .synth import SynthConfig, generate, ground_truth_ce

SCHEMA = 1
log = logging.getLogger("propercal")


class UsageError(InputError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(float(t)) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")


def _metrics(text: str) -> list[str]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    for name in names:
        try:
            get_generator(name)
        except KeyError as exc:
            raise argparse.ArgumentTypeError(exc.args[0]) from None
    return names


# -- output -----------------------------------------------------------------

def _flatten(rows: list[dict]) -> list[dict]:
    flat = []
    for r in rows:
        flat.append({k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()})
    return flat


def _render(payload: dict, rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(payload, indent=2, sort_keys=False) + "\n"
    rows = _flatten(rows)
    cols: list[str] = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    cells = [[str(c) for c in cols]] + [[_cell(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _emit(args, payload: dict, rows: list[dict]) -> None:
    text = _render(payload, rows, args.format)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _kernel(args, mode: str = "canonical"):
    name = args.kernel or ("binning" if mode == "toplabel" else "dirichlet")
    if args.bins is not None and name != "binning":
        raise UsageError("--bins is only valid with --kernel binning")
    if args.bandwidth is not None and name != "dirichlet":
        raise UsageError("--bandwidth is only valid with --kernel dirichlet")
    if name == "binning":
        return Binning(args.bins if args.bins is not None else 15)
    return Dirichlet(args.bandwidth)


def _kernel_info(kernel, requested) -> dict:
    info = kernel.describe()
    if isinstance(kernel, Dirichlet):
        info["selected_by"] = "user" if requested.bandwidth is not None else "loo-mle"
    info.update(loo=True, clamp_eps=EPS)
    return info


# -- eval -------------------------------------------------------------------

def _eval_dataset(dataset, metrics, kernel, mode: str) -> tuple[list[dict], dict]:
    if mode == "toplabel":
        if not isinstance(kernel, Binning):
            raise UsageError("toplabel mode uses the binning kernel")
        value = binned_toplabel_ece(dataset, kernel.bins)
        return [{"metric": "tce1", "value": value}], _kernel_info(kernel, kernel)

    if mode == "classwise":
        rows = []
        for name in metrics:
            F = get_generator(name)
            binary = F if F.dim == 2 else get_generator(BINARY_COUNTERPART[F.name])
            rep = classwise_decompose(dataset, binary, kernel)
            d = rep.to_dict()
            row = {"generator": name, "binary_generator": binary.name}
            row.update({k: d[k] for k in ("risk", "calibration_error", "ce_via_risk",
                                           "refinement", "sharpness")})
            row["per_class"] = [r.calibration_error for r in rep.per_class]
            if isinstance(kernel, Dirichlet):
                row["bandwidths"] = [r.kernel["bandwidth"] for r in rep.per_class]
            rows.append(row)
        if isinstance(kernel, Binning):
            v, per = binned_classwise_ce1(dataset, kernel.bins, return_per_class=True)
            rows.append({"generator": "l1-binned", "calibration_error": v,
                         "per_class": per.tolist()})
        return rows, kernel.describe() | {"loo": True, "clamp_eps": EPS}

    resolved = resolve_kernel(kernel, dataset)
    E = cond_expectation(dataset, resolved)
    rows = []
    for name in metrics:
        rep = decompose(dataset, name, resolved, E=E)
        row = {"generator": name, "risk": rep.risk, "ce_direct": rep.calibration_error,
               "ce_via_risk": rep.ce_via_risk, "refinement": rep.refinement,
               "sharpness": rep.sharpness}
        if rep.ce_kl is not None:
            row["ce_kl"] = rep.ce_kl
        rows.append(row)
    return rows, _kernel_info(resolved, kernel)


def cmd_eval(args) -> int:
    dataset = load_predictions(args.input, args.input_format)
    kernel = _kernel(args, args.mode)
    rows, kinfo = _eval_dataset(dataset, args.metric, kernel, args.mode)
    payload = {"schema": SCHEMA, "command": "eval", "input": str(args.input),
               "n": dataset.n, "k": dataset.k, "mode": args.mode, "kernel": kinfo,
               "seed": args.seed, "results": rows}
    _emit(args, payload, rows)
    return 0


# -- sweep ------------------------------------------------------------------

def _sweep_one(n, k, t1, t2, seed, F, kernel, estimator):
    s = generate(SynthConfig(n, k, t1, t2, seed))
    d = s.dataset
    rep = _decompose_arrays(d.probs, d.labels, d.k, get_generator(F), kernel)
    return rep.calibration_error if estimator == "direct" else rep.ce_via_risk


def cmd_sweep(args) -> int:
    kernel = _kernel(args)
    oracle = ground_truth_ce(SynthConfig(1, args.k, args.t1, args.t2, args.seed),
                             args.metric[0], args.oracle_draws)
    per_seed = []
    for n in args.n_grid:
        for i in range(args.seeds):
            seed = args.seed + i
            est = _sweep_one(n, args.k, args.t1, args.t2, seed, args.metric[0], kernel,
                             args.estimator)
            per_seed.append({"n": n, "seed": seed, "estimate": est,
                             "bias": est - oracle.value})
            log.info("n=%d seed=%d estimate=%.6g", n, seed, est)
    per_seed.sort(key=lambda r: (r["n"], r["seed"]))
    if args.per_seed:
        rows = per_seed
    else:
        rows = []
        for n in sorted(set(args.n_grid)):
            est = np.array([r["estimate"] for r in per_seed if r["n"] == n])
            se = float(est.std(ddof=1) / np.sqrt(est.size)) if est.size > 1 else float("nan")
            rows.append({"n": n, "seeds": int(est.size), "mean_estimate": float(est.mean()),
                         "mean_abs_bias": float(np.mean(np.abs(est - oracle.value))),
                         "std_error": se, "oracle": oracle.value})
    payload = {"schema": SCHEMA, "command": "sweep", "k": args.k, "t1": args.t1, "t2": args.t2,
               "generator": args.metric[0], "estimator": args.estimator,
               "kernel": kernel.describe(), "oracle": oracle.to_dict(), "rows": rows}
    _emit(args, payload, rows)
    return 0


# -- calibrate --------------------------------------------------------------

def cmd_calibrate_fit(args) -> int:
    dataset = load_predictions(args.input, args.input_format)
    if args.method == "temperature":
        model = cal.temperature_fit(dataset)
    else:
        model = cal.isotonic_fit(dataset)
    text = json.dumps(model.to_dict(), indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_calibrate_apply(args) -> int:
    try:
        model = cal.load_model(args.model)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read model {args.model}: {exc}") from None
    dataset = load_predictions(args.input, args.input_format)
    if isinstance(model, cal.IsotonicModel) and len(model.classes) != dataset.k:
        raise UsageError(f"model has {len(model.classes)} classes, input has {dataset.k}")
    out = cal.apply_model(model, dataset)
    if args.output:
        write_predictions(out, args.output)
    if not args.compare:
        if not args.output:
            write_matrix_csv(sys.stdout, out.probs, out.labels, "p")
        return 0
    kernel = _kernel(args)
    rows = []
    for name in args.metric:
        before = decompose(dataset, name, kernel).calibration_error
        after = decompose(out, name, kernel).calibration_error
        change = (after - before) / before if before > 0 else float("nan")
        rows.append({"generator": name, "ce_before": before, "ce_after": after,
                     "relative_change": change, "change": f"{change * 100:+.0f}%"})
    payload = {"schema": SCHEMA, "command": "calibrate apply", "model": model.to_dict()["type"],
               "input": str(args.input), "results": rows}
    sys.stdout.write(_render(payload, rows, args.format))
    return 0


# -- bandwidth --------------------------------------------------------------

def cmd_bandwidth(args) -> int:
    dataset = load_predictions(args.input, args.input_format)
    grid = np.asarray(args.grid, dtype=float)
    scores = loo_log_likelihood(dataset, grid)
    order = np.argsort(grid, kind="stable")
    best = order[0]
    for i in order[1:]:
        if scores[i] > scores[best]:
            best = i
    tied = sorted({float(g) for g, s in zip(grid, scores) if s == scores[best]})
    rows = [{"bandwidth": float(g), "loo_log_likelihood": float(s)} for g, s in zip(grid, scores)]
    payload = {"schema": SCHEMA, "command": "bandwidth", "input": str(args.input),
               "selected": float(grid[best]), "candidates": rows}
    if len(tied) > 1 or np.sum(scores == scores[best]) > 1:
        payload["note"] = f"tie between {tied}; smallest bandwidth chosen"
    _emit(args, payload, rows)
    return 0


# -- synth ------------------------------------------------------------------

def truth_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".truth" + p.suffix)


def cmd_synth(args) -> int:
    cfg = SynthConfig(args.n, args.k, args.t1, args.t2, args.seed)
    s = generate(cfg)
    if args.output:
        write_matrix_csv(args.output, s.predictions, s.labels, "p")
        write_matrix_csv(truth_path(args.output), s.truth, s.labels, "p")
    if args.oracle_out:
        path = Path(args.oracle_out)
        doc = json.loads(path.read_text()) if path.exists() else {"schema": SCHEMA, "oracles": {}}
        for name in args.metric:
            o = ground_truth_ce(cfg, name, args.oracle_draws)
            key = f"k={args.k},t1={args.t1},t2={args.t2},F={get_generator(name).name}"
            doc["oracles"][key] = o.to_dict() | {"seed": args.seed + 1_000_003}
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if not args.output and not args.oracle_out:
        write_matrix_csv(sys.stdout, s.predictions, s.labels, "p")
    return 0


# -- layer sharpness --------------------------------------------------------

def cmd_layer_sharpness(args) -> int:
    kernel = _kernel(args)
    labels0 = None
    rows = []
    for path in args.inputs:
        X, y = load_features(path, args.input_format)
        if labels0 is None:
            labels0 = y
        elif y.shape != labels0.shape or np.any(y != labels0):
            raise UsageError(f"{path}: labels differ from the first layer file")
        row = {"layer": str(path)}
        for name in args.metric:
            row[name] = layer_sharpness(X, y, name, kernel)
        rows.append(row)
    violations = []
    for name in args.metric:
        for a, b in zip(rows, rows[1:]):
            if b[name] > a[name] + args.tolerance:
                violations.append({"generator": name, "layer": a["layer"], "next": b["layer"],
                                   "increase": b[name] - a[name]})
    payload = {"schema": SCHEMA, "command": "layer-sharpness", "kernel": kernel.describe(),
               "tolerance": args.tolerance, "layers": rows, "violations": violations}
    _emit(args, payload, rows)
    for v in violations:
        print(f"warning: sharpness ({v['generator']}) rises by {v['increase']:.4g} "
              f"from {v['layer']} to {v['next']}", file=sys.stderr)
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed")
    common.add_argument("--output", "-o", help="output path (default: stdout)")
    common.add_argument("--format", choices=("json", "csv", "table"),
                        help="output format (default: csv for sweep, json otherwise)")
    common.add_argument("--verbose", "-v", action="store_true")

    kern = argparse.ArgumentParser(add_help=False)
    kern.add_argument("--kernel", choices=("dirichlet", "binning"))
    kern.add_argument("--bandwidth", type=float, help="Dirichlet bandwidth (default: LOO-MLE)")
    kern.add_argument("--bins", type=int, help="bins per axis for the binning kernel")
    kern.add_argument("--metric", type=_metrics, default=["kl"],
                      help="comma-separated generators: kl, brier, ...")

    inp = argparse.ArgumentParser(add_help=False)
    inp.add_argument("--input-format", choices=("csv", "jsonl"))

    p = argparse.ArgumentParser(prog="propercal", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("eval", parents=[common, kern, inp], help="estimate CE, refinement, sharpness")
    e.add_argument("input")
    e.add_argument("--mode", choices=("canonical", "classwise", "toplabel"), default="canonical")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", parents=[common, kern], help="bias versus sample size on synthetic data")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--n-grid", type=_ints, default=[100, 500, 1000, 3000, 5000, 8000])
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--t1", type=float, default=0.9)
    s.add_argument("--t2", type=float, default=0.6)
    s.add_argument("--oracle-draws", type=int, default=10**6)
    s.add_argument("--estimator", choices=("direct", "via-risk"), default="direct")
    s.add_argument("--per-seed", action="store_true", help="one row per (n, seed)")
    s.set_defaults(func=cmd_sweep, default_format="csv")

    c = sub.add_parser("calibrate", help="post-hoc recalibration")
    csub = c.add_subparsers(dest="action", required=True)
    cf = csub.add_parser("fit", parents=[common, inp])
    cf.add_argument("input")
    cf.add_argument("--method", choices=("temperature", "isotonic"), default="temperature")
    cf.set_defaults(func=cmd_calibrate_fit)
    ca = csub.add_parser("apply", parents=[common, kern, inp])
    ca.add_argument("input")
    ca.add_argument("--model", required=True)
    ca.add_argument("--compare", action="store_true", help="print CE before/after")
    ca.set_defaults(func=cmd_calibrate_apply)

    b = sub.add_parser("bandwidth", parents=[common, inp], help="LOO-MLE bandwidth selection")
    b.add_argument("input")
    b.add_argument("--grid", type=_floats, default=list(DEFAULT_GRID))
    b.set_defaults(func=cmd_bandwidth)

    y = sub.add_parser("synth", parents=[common], help="write a synthetic prediction file")
    y.add_argument("--n", type=int, default=1000)
    y.add_argument("--k", type=int, default=10)
    y.add_argument("--t1", type=float, default=0.9)
    y.add_argument("--t2", type=float, default=0.6)
    y.add_argument("--oracle-out", help="merge ground-truth CE values into this JSON file")
    y.add_argument("--oracle-draws", type=int, default=10**6)
    y.add_argument("--metric", type=_metrics, default=["kl", "brier"])
    y.set_defaults(func=cmd_synth)

    ls = sub.add_parser("layer-sharpness", parents=[common, kern, inp],
                        help="sharpness of each layer's activations")
    ls.add_argument("inputs", nargs="+")
    ls.add_argument("--tolerance", type=float, default=0.02)
    ls.set_defaults(func=cmd_layer_sharpness)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.format is None:
        args.format = getattr(args, "default_format", "json")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    except (InputError, ParseError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
