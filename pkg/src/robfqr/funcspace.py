"""Discretized L2(0, 1): grids, curves, kernels and trapezoid quadrature.

Every curve in one analysis lives on a single shared :class:`Grid`; nothing
here interpolates between grids.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GridMismatchError, UnsupportedGridError


def _frozen(a, ndim):
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def trapezoid_weights(points) -> np.ndarray:
    """Composite trapezoid weights for arbitrary increasing abscissae."""
    t = np.asarray(points, dtype=float)
    h = np.diff(t)
    w = np.zeros_like(t)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    """Ordered abscissae in [0, 1] with positive quadrature weights."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points, 1)
        wts = _frozen(self.weights, 1)
        if pts.size < 2 or pts.size != wts.size:
            raise ValueError("grid needs >= 2 points and one weight per point")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        if pts[0] < 0 or pts[-1] > 1:
            raise ValueError("grid points must lie in [0, 1]")
        if np.any(wts <= 0):
            raise ValueError("quadrature weights must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    @classmethod
    def uniform(cls, size: int = 100) -> "Grid":
        """``size`` equispaced points on [0, 1] with trapezoid weights."""
        pts = np.linspace(0.0, 1.0, size)
        return cls(pts, trapezoid_weights(pts))

    @classmethod
    def from_points(cls, points) -> "Grid":
        return cls(points, trapezoid_weights(points))

    def __len__(self):
        return self.points.size

    @property
    def is_uniform(self) -> bool:
        h = np.diff(self.points)
        return bool(np.allclose(h, h[0], rtol=1e-9, atol=0.0))

    @property
    def spacing(self) -> float:
        if not self.is_uniform:
            raise UnsupportedGridError("grid is not uniform")
        return float(self.points[1] - self.points[0])

    def same_as(self, other: "Grid") -> bool:
        return self is other or (
            np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def __eq__(self, other):
        return isinstance(other, Grid) and self.same_as(other)

    __hash__ = object.__hash__


def check_same_grid(*grids: Grid) -> Grid:
    first = grids[0]
    for g in grids[1:]:
        if not first.same_as(g):
            raise GridMismatchError("objects live on different grids")
    return first


@dataclass(frozen=True, eq=False)
class Curve:
    """Function values on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values, 1)
        if vals.size != len(self.grid):
            raise ValueError(
                f"curve has {vals.size} values but the grid has {len(self.grid)} points"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("curve values must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Curve":
        return cls(grid, fn(grid.points))

    @classmethod
    def zeros(cls, grid: Grid) -> "Curve":
        return cls(grid, np.zeros(len(grid)))

    def _other(self, other):
        if isinstance(other, Curve):
            check_same_grid(self.grid, other.grid)
            return other.values
        return other

    def __add__(self, other):
        return Curve(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Curve(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Curve(self.grid, self._other(other) - self.values)

    def __mul__(self, k):
        return Curve(self.grid, self.values * k)

    __rmul__ = __mul__

    def __truediv__(self, k):
        return Curve(self.grid, self.values / k)

    def __neg__(self):
        return Curve(self.grid, -self.values)

    def norm(self) -> float:
        return float(np.sqrt(inner_product(self, self)))


@dataclass(frozen=True, eq=False)
class Surface:
    """Bivariate kernel values on the grid x grid lattice."""

    grid: Grid
    values: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        vals = _frozen(self.values, 2)
        m = len(self.grid)
        if vals.shape != (m, m):
            raise ValueError(f"surface must be {m}x{m}, got {vals.shape}")
        if self.symmetric and not is_symmetric(vals):
            raise ValueError("surface flagged symmetric but it is not")
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid: Grid) -> "Surface":
        m = len(grid)
        return cls(grid, np.zeros((m, m)), symmetric=True)

    @classmethod
    def outer(cls, f: Curve, g: Curve | None = None) -> "Surface":
        """The kernel f(s) g(t); symmetric when ``g`` is omitted."""
        if g is None:
            return cls(f.grid, np.outer(f.values, f.values), symmetric=True)
        check_same_grid(f.grid, g.grid)
        return cls(f.grid, np.outer(f.values, g.values))

    def symmetrized(self) -> "Surface":
        return Surface(self.grid, 0.5 * (self.values + self.values.T), symmetric=True)

    def __add__(self, other: "Surface"):
        check_same_grid(self.grid, other.grid)
        return Surface(
            self.grid,
            self.values + other.values,
            symmetric=self.symmetric and other.symmetric,
        )

    def __mul__(self, k):
        return Surface(self.grid, self.values * k, symmetric=self.symmetric)

    __rmul__ = __mul__


def is_symmetric(k: np.ndarray, rtol: float = 1e-10) -> bool:
    scale = np.max(np.abs(k)) if k.size else 0.0
    return bool(np.max(np.abs(k - k.T), initial=0.0) <= rtol * scale)


def inner_product(f: Curve, g: Curve) -> float:
    """Trapezoid approximation of the L2 inner product."""
    grid = check_same_grid(f.grid, g.grid)
    return float(np.sum(grid.weights * (f.values * g.values)))


def quadratic_form(k: Surface, f: Curve) -> float:
    """Double quadrature of k(s, t) f(s) f(t)."""
    grid = check_same_grid(k.grid, f.grid)
    wf = grid.weights * f.values
    return float(wf @ k.values @ wf)


def derivative(f: Curve) -> Curve:
    """First derivative by second-order finite differences.

    Central differences inside, one-sided three-point stencils at the ends, so
    polynomials of degree two are differentiated exactly.
    """
    grid = f.grid
    if len(grid) < 3:
        raise UnsupportedGridError("differentiation needs at least 3 grid points")
    if not grid.is_uniform:
        raise UnsupportedGridError("differentiation needs a uniform grid")
    return Curve(grid, np.gradient(f.values, grid.spacing, edge_order=2))


def stack(sample: Sequence[Curve]) -> tuple[Grid, np.ndarray]:
    """Shared grid and the n x M value matrix of a sample of curves."""
    if len(sample) == 0:
        raise ValueError("empty sample")
    grid = check_same_grid(*(c.grid for c in sample))
    return grid, np.vstack([c.values for c in sample])


def curves(grid: Grid, values: np.ndarray) -> list[Curve]:
    """Split an n x M matrix into curves on ``grid``."""
    return [Curve(grid, row) for row in np.atleast_2d(values)]


def norms(grid: Grid, values: np.ndarray) -> np.ndarray:
    """L2 norms of the rows of ``values``."""
    return np.sqrt(np.maximum((values * values) @ grid.weights, 0.0))
