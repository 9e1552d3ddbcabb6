"""File formats: curve CSV tables, fit JSON and study CSV."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError
from .funcspace import Grid
from .regression import FitResult

STUDY_FIELDS = ("scenario", "estimator", "metric", "target", "value", "reps", "failures")


@dataclass(frozen=True, eq=False)
class CurveTable:
    """Curves read from CSV, with abscissae mapped affinely onto [0, 1].

    ``offset`` and ``scale`` record the map ``t = (x - offset) * scale``.
    """

    ids: list[str]
    grid: Grid
    values: np.ndarray
    responses: dict[str, np.ndarray] = field(default_factory=dict)
    abscissae: np.ndarray = None
    offset: float = 0.0
    scale: float = 1.0

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def response(self, name: str) -> np.ndarray:
        if name not in self.responses:
            raise KeyError(f"response column not found: {name!r}")
        return self.responses[name]


def _float(cell, row, col, path):
    try:
        val = float(cell)
    except ValueError:
        raise ParseError(f"{path}: row {row}, column {col}: non-numeric value {cell!r}") from None
    if not math.isfinite(val):
        raise ParseError(f"{path}: row {row}, column {col}: missing or non-finite value {cell!r}")
    return val


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def parse_curves_csv(path) -> CurveTable:
    """Read ``id[,y...],t_1,...,t_M`` headed CSV of curves.

    Non-numeric header cells after ``id`` name response columns; the numeric
    ones are the abscissae.  Rows are 1-based with the header as row 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3:
        raise ParseError(f"{path}: header needs an id column and at least 2 abscissae")
    first_t = next((k for k in range(1, len(header)) if _is_number(header[k])), None)
    if first_t is None:
        raise ParseError(f"{path}: header has no numeric abscissae")
    names = header[1:first_t]
    for k in range(first_t, len(header)):
        if not _is_number(header[k]):
            raise ParseError(f"{path}: row 1, column {k + 1}: abscissa {header[k]!r} is not numeric")
    x = np.array([float(h) for h in header[first_t:]])
    if x.size < 2 or np.any(np.diff(x) <= 0):
        raise ParseError(f"{path}: row 1: abscissae must be strictly increasing")
    width = len(header)
    ids, vals, resp = [], [], {nm: [] for nm in names}
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise ParseError(f"{path}: row {r} has {len(row)} cells, expected {width}")
        ids.append(row[0].strip())
        for k, nm in enumerate(names, start=1):
            resp[nm].append(_float(row[k], r, k + 1, path))
        vals.append([_float(row[k], r, k + 1, path) for k in range(first_t, width)])
    if not vals:
        raise ParseError(f"{path}: no data rows")
    offset, span = float(x[0]), float(x[-1] - x[0])
    scale = 1.0 / span
    t = np.clip((x - offset) * scale, 0.0, 1.0)
    return CurveTable(
        ids=ids,
        grid=Grid.from_points(t),
        values=np.array(vals),
        responses={k: np.array(v) for k, v in resp.items()},
        abscissae=x,
        offset=offset,
        scale=scale,
    )


def write_curves_csv(path, ids, abscissae, values, responses: dict | None = None) -> None:
    responses = responses or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *responses, *(repr(float(a)) for a in abscissae)])
        for i, row in enumerate(np.atleast_2d(values)):
            w.writerow([ids[i], *(repr(float(v[i])) for v in responses.values()), *map(repr, map(float, row))])


def boxplot_outliers(residuals) -> np.ndarray:
    """Indices outside the quartiles -/+ 1.5 IQR fences."""
    r = np.asarray(residuals, dtype=float)
    q1, q3 = np.percentile(r, [25, 75])
    iqr = q3 - q1
    return np.flatnonzero((r < q1 - 1.5 * iqr) | (r > q3 + 1.5 * iqr))


def fit_to_dict(fit: FitResult, ids=None, table: CurveTable | None = None, derivative: int = 0) -> dict:
    t = fit.grid.points.tolist()
    ids = list(ids) if ids is not None else [str(i) for i in range(fit.residuals.size)]
    out = boxplot_outliers(fit.residuals)
    doc = {
        "alpha": fit.alpha,
        "sigma": fit.sigma,
        "p": fit.p,
        "method": fit.method,
        "b": fit.coef.b.tolist(),
        "u": fit.coef.u.tolist(),
        "a_star": fit.alpha_star,
        "mu_scores": fit.mu_scores.tolist(),
        "beta": {"t": t, "v": fit.beta.values.tolist()},
        "beta_star": {"t": t, "v": fit.beta_star.values.tolist()},
        "upsilon": {"t": t, "rows": fit.upsilon.values.tolist()},
        "center": {"t": t, "v": fit.basis.center.values.tolist()},
        "weights_quadrature": fit.grid.weights.tolist(),
        "residuals": fit.residuals.tolist(),
        "weights": fit.weights.tolist(),
        "outliers": [ids[i] for i in out],
        "ids": ids,
        "derivative": derivative,
    }
    if table is not None:
        doc["abscissa_map"] = {"offset": table.offset, "scale": table.scale}
    return doc


FIT_SCHEMA = {
    "type": "object",
    "required": [
        "alpha", "sigma", "p", "method", "b", "u", "mu_scores",
        "beta", "upsilon", "residuals", "weights", "outliers",
    ],
    "properties": {
        "alpha": {"type": "number"},
        "sigma": {"type": "number", "minimum": 0},
        "p": {"type": "integer", "minimum": 1},
        "method": {"enum": ["ls", "mm"]},
        "b": {"type": "array", "items": {"type": "number"}},
        "u": {"type": "array", "items": {"type": "number"}},
        "mu_scores": {"type": "array", "items": {"type": "number"}},
        "beta": {
            "type": "object",
            "required": ["t", "v"],
            "properties": {
                "t": {"type": "array", "items": {"type": "number"}},
                "v": {"type": "array", "items": {"type": "number"}},
            },
        },
        "upsilon": {
            "type": "object",
            "required": ["t", "rows"],
            "properties": {
                "t": {"type": "array", "items": {"type": "number"}},
                "rows": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
            },
        },
        "residuals": {"type": "array", "items": {"type": "number"}},
        "weights": {"type": "array", "items": {"type": "number"}},
        "outliers": {"type": "array", "items": {"type": "string"}},
    },
}


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_fit_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def predict_from_dict(doc: dict, values: np.ndarray) -> np.ndarray:
    """Predictions alpha + <beta, x> + <x, upsilon x> from a stored fit.

    ``values`` must already be on the stored grid (and differentiated if the
    fit was made on derivatives).
    """
    w = np.asarray(doc["weights_quadrature"])
    beta = np.asarray(doc["beta"]["v"])
    ups = np.asarray(doc["upsilon"]["rows"])
    wx = np.atleast_2d(values) * w
    return doc["alpha"] + wx @ beta + np.einsum("im,ml,il->i", wx, ups, wx)


def write_study_csv(path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=STUDY_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in STUDY_FIELDS})


def read_study_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
