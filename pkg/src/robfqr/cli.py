"""Command-line front end: ``robfqr fit|predict|pca|simulate|synth``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import RobFQRError
from .fpca import build_basis_array
from .funcspace import Curve, derivative
from .regression import fit_arrays
from .simulation import Contamination, ScenarioConfig, run_study
from .tecator import tecator_like

DEFAULT_SEED = 20240101
log = logging.getLogger("robfqr")


def _positive_int(text):
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {val}")
    return val


def _fraction(text):
    val = float(text)
    if not 0 < val <= 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1]")
    return val


def _differentiate(table: io.CurveTable, order: int) -> np.ndarray:
    values = table.values
    for _ in range(order):
        values = np.vstack([derivative(Curve(table.grid, row)).values for row in values])
    return values


def cmd_fit(args) -> int:
    table = io.parse_curves_csv(args.input)
    try:
        y = table.response(args.response)
    except KeyError:
        raise RobFQRError(f"response column not found: {args.response!r}") from None
    values = _differentiate(table, args.derivative)
    p = args.ncomp if args.ncomp is not None else "auto"
    res = fit_arrays(
        table.grid, values, y, method=args.method, p=p, threshold=args.var_frac, seed=args.seed
    )
    doc = io.fit_to_dict(res, table.ids, table, args.derivative)
    io.write_json(args.out, doc)
    log.info("fit %s: p=%d sigma=%.4g, %d outlier(s)", args.method, res.p, res.sigma, len(doc["outliers"]))
    return 0


def cmd_predict(args) -> int:
    doc = io.load_fit_json(args.model)
    table = io.parse_curves_csv(args.input)
    if not np.allclose(table.grid.points, doc["beta"]["t"], rtol=0, atol=1e-12):
        raise RobFQRError("input curves are not on the fitted grid")
    pred = io.predict_from_dict(doc, _differentiate(table, int(doc.get("derivative", 0))))
    with Path(args.out).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "prediction"])
        for i, v in zip(table.ids, pred):
            w.writerow([i, repr(float(v))])
    return 0


def cmd_pca(args) -> int:
    table = io.parse_curves_csv(args.input)
    values = _differentiate(table, args.derivative)
    m = min(args.ncomp, len(table.grid))
    basis = build_basis_array(table.grid, values, args.method)
    out = Path(args.out)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "abscissa", "center", *(f"phi_{j + 1}" for j in range(m))])
        for k, t in enumerate(table.grid.points):
            w.writerow(
                [repr(float(t)), repr(float(table.abscissae[k])), repr(float(basis.center.values[k]))]
                + [repr(float(basis.phi[j, k])) for j in range(m)]
            )
    scales_path = out.with_name(out.stem + ".scales.csv")
    total = basis.scales.sum()
    with scales_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "scale", "fraction", "cumulative"])
        cum = 0.0
        for j in range(m):
            frac = float(basis.scales[j] / total) if total > 0 else 0.0
            cum += frac
            w.writerow([j + 1, repr(float(basis.scales[j])), repr(frac), repr(cum)])
    return 0


def parse_sweep(text: str) -> tuple[str, list[float]]:
    """``mu=8:20:2`` -> ("mu", [8, 10, ..., 20])."""
    name, eq, rng = text.partition("=")
    name = name.strip().lower()
    parts = rng.split(":")
    if not eq or name not in ("mu", "delta") or len(parts) != 3:
        raise ValueError(f"bad sweep {text!r}; expected e.g. mu=8:20:2")
    start, stop, step = map(float, parts)
    if step <= 0 or stop < start:
        raise ValueError(f"bad sweep range in {text!r}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return name, [round(start + k * step, 12) for k in range(count)]


def _scenario(args, contamination: Contamination) -> ScenarioConfig:
    return ScenarioConfig(
        model=f"model{args.model}",
        upsilon_choice=args.upsilon,
        contamination=contamination,
        n=args.n,
        n_reps=args.reps,
        seed=args.seed,
    )


def cmd_simulate(args) -> int:
    contamination = Contamination.parse(args.contamination)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = set(methods) - {"ls", "mm"}
    if bad or not methods:
        raise ValueError(f"--methods must be a subset of ls,mm; got {args.methods!r}")
    if args.sweep:
        name, grid = parse_sweep(args.sweep)
        points = [Contamination(contamination.kind, **{**_params(contamination), name: v}) for v in grid]
    else:
        points = [contamination]
    configs = [_scenario(args, c) for c in points]  # validates every point up front
    rows, reports = [], []
    for cfg in configs:
        rep = run_study(cfg, methods, n_jobs=args.jobs)
        reports.append(rep.to_dict())
        rows.extend(rep.table())
    if args.sweep:
        rows.extend(_max_rows(rows, configs[0], contamination.kind))
    io.write_study_csv(args.out, rows)
    io.write_json(Path(args.out).with_suffix(".json"), {"reports": reports})
    return 0


def _params(c: Contamination) -> dict:
    return {k: v for k, v in (("mu", c.mu), ("delta", c.delta)) if v is not None}


def _max_rows(rows, cfg, kind):
    """Worst case over the sweep for every (estimator, metric, target)."""
    best: dict = {}
    for r in rows:
        key = (r["estimator"], r["metric"], r["target"])
        if key not in best or r["value"] > best[key]["value"]:
            best[key] = r
    label = f"{cfg.model}/{cfg.upsilon_choice}/{kind}:max/n={cfg.n}"
    return [{**r, "scenario": label} for r in best.values()]


def cmd_synth(args) -> int:
    ids, x, curves, fat, _ = tecator_like(args.n, args.seed, outlier_fraction=args.outliers)
    io.write_curves_csv(args.out, ids, x, curves, {"fat": fat})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robfqr", description="Robust functional quadratic regression."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to a curves CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--method", choices=("ls", "mm"), required=True)
    p.add_argument("--derivative", type=int, choices=(0, 1), default=0)
    dim = p.add_mutually_exclusive_group()
    dim.add_argument("--ncomp", type=_positive_int)
    dim.add_argument("--var-frac", type=_fraction, default=0.9)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict responses with a stored fit")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("pca", help="principal directions as plot-ready CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=("classical", "spherical"), required=True)
    p.add_argument("--ncomp", type=_positive_int, required=True)
    p.add_argument("--derivative", type=int, choices=(0, 1), default=0)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("simulate", help="Monte Carlo study")
    p.add_argument("--model", type=int, choices=(1, 2), required=True)
    p.add_argument("--upsilon", required=True)
    p.add_argument("--contamination", default="C0")
    p.add_argument("--n", type=_positive_int, default=300)
    p.add_argument("--reps", type=_positive_int, default=100)
    p.add_argument("--methods", default="ls,mm")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--sweep")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", help="write Tecator-shaped synthetic curves")
    p.add_argument("--n", type=_positive_int, default=215)
    p.add_argument("--outliers", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out)
    try:
        return args.func(args)
    except (RobFQRError, ValueError, OSError) as exc:
        if out.exists():
            out.unlink()
        print(f"robfqr {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
