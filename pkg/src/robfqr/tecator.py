"""Synthetic spectrometric curves shaped like the Tecator absorbance data.

The real data (215 meat samples, absorbance at 100 wavelengths in
850-1050 nm, fat content as response) are not redistributed here; this
generator gives data with the same layout for tests and demos.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .funcspace import Grid

WAVELENGTHS = np.linspace(850.0, 1050.0, 100)


def _bump(x, centre, width):
    return np.exp(-0.5 * ((x - centre) / width) ** 2)


def _bump_slope(x, centre, width, span):
    # derivative of _bump with respect to t = (x - 850) / span
    return -span * (x - centre) / width**2 * _bump(x, centre, width)


@dataclass(frozen=True, eq=False)
class TecatorTruth:
    """Regression function of fat on the first derivative (in t units)."""

    alpha: float
    beta: np.ndarray
    upsilon: np.ndarray
    grid: Grid

    def __call__(self, deriv: np.ndarray) -> np.ndarray:
        wx = np.atleast_2d(deriv) * self.grid.weights
        return self.alpha + wx @ self.beta + np.einsum("im,ml,il->i", wx, self.upsilon, wx)


_CENTRES = np.array([930.0, 1020.0, 970.0])
_WIDTHS = np.array([25.0, 30.0, 15.0])
_SD = np.array([0.6, 0.35, 0.3, 0.3])


def _shapes(x):
    t = (x - x[0]) / (x[-1] - x[0])
    return np.vstack(
        [_bump(x, _CENTRES[0], _WIDTHS[0]), _bump(x, _CENTRES[1], _WIDTHS[1]), t, _bump(x, _CENTRES[2], _WIDTHS[2])]
    )


def _slopes(x):
    span = x[-1] - x[0]
    s = [_bump_slope(x, c, w, span) for c, w in zip(_CENTRES, _WIDTHS)]
    return np.vstack([s[0], s[1], np.ones_like(x), s[2]])


def tecator_truth() -> TecatorTruth:
    """Slope and kernel used by :func:`tecator_like`, both in the derivative span."""
    grid = Grid.uniform(WAVELENGTHS.size)
    d = _slopes(WAVELENGTHS)
    # quadrature-orthonormal basis of the derivative span
    sw = np.sqrt(grid.weights)
    q, _ = np.linalg.qr((d * sw).T)
    q = (q / sw[:, None]).T
    q *= np.sign(q[np.arange(4), np.argmax(np.abs(q), axis=1)])[:, None]
    beta = 1.5 * q[0] - 1.0 * q[1] + 0.5 * q[2]
    v = np.array([[0.4, 0.15, 0.0, 0.0], [0.15, -0.2, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
    return TecatorTruth(18.0, beta, q.T @ v @ q, grid)


def tecator_like(
    n: int = 215,
    seed: int = 20240101,
    noise: float = 0.1,
    outlier_fraction: float = 0.0,
):
    """Absorbance curves and fat contents.

    The first derivative of every curve lies in a fixed 4-dimensional span,
    and fat follows ``tecator_truth()`` applied to that derivative plus
    Gaussian noise.  ``outlier_fraction`` of the responses get a gross shift.

    Returns
    -------
    ids, wavelengths, curves (n x 100), fat (n,), outlier mask (n,)
    """
    rng = np.random.default_rng(seed)
    x = WAVELENGTHS
    t = (x - x[0]) / (x[-1] - x[0])
    base = 2.5 + 0.8 * _bump(x, 930.0, 40.0) + 0.4 * t
    base_slope = 0.8 * _bump_slope(x, 930.0, 40.0, x[-1] - x[0]) + 0.4
    scores = rng.standard_normal((n, 4)) * _SD
    curves = base + scores @ _shapes(x)
    deriv = base_slope + scores @ _slopes(x)
    fat = tecator_truth()(deriv) + noise * rng.standard_normal(n)
    out = np.zeros(n, dtype=bool)
    if outlier_fraction > 0:
        k = int(round(outlier_fraction * n))
        idx = rng.choice(n, size=k, replace=False)
        out[idx] = True
        fat[idx] += rng.choice([-1.0, 1.0], size=k) * rng.uniform(25.0, 40.0, size=k)
    ids = [f"s{i + 1:03d}" for i in range(n)]
    return ids, x.copy(), curves, fat, out
