"""Spatial (geometric) median of a sample of curves."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConvergenceError
from .funcspace import Curve, Grid, norms, stack

COINCIDENCE = 1e-12


def objective(grid: Grid, values: np.ndarray, theta: np.ndarray) -> float:
    """Sum of ||X_i - theta|| - ||X_i||."""
    return float(np.sum(norms(grid, values - theta) - norms(grid, values)))


def _is_minimiser_at(grid: Grid, values: np.ndarray, k: int, row_norms: np.ndarray) -> bool:
    diff = values - values[k]
    dist = norms(grid, diff)
    same = dist < COINCIDENCE * (1.0 + row_norms[k])
    others = ~same
    if not np.any(others):
        return True
    r = (diff[others] / dist[others, None]).sum(axis=0)
    # coincident copies of x_k add their count to the subgradient budget
    return float(np.sqrt(r * r @ grid.weights)) <= np.count_nonzero(same)


def spatial_median_array(
    grid: Grid, values: np.ndarray, tol: float = 1e-8, max_iter: int = 500
) -> np.ndarray:
    """Weiszfeld iteration on the rows of ``values``; returns the median values.

    Terms whose distance to the iterate falls below the coincidence threshold
    are dropped from both the step and the first-order check.  Each step
    also checks whether the nearest data point satisfies the subgradient
    optimality condition, and returns it exactly if so.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n = values.shape[0]
    if n == 0:
        raise ValueError("empty sample")
    if tol <= 0:
        raise ValueError("tol must be positive")
    row_norms = norms(grid, values)
    theta = np.median(values, axis=0)
    grad_norm = np.inf
    for _ in range(max_iter + 1):
        diff = values - theta
        dist = norms(grid, diff)
        keep = dist >= COINCIDENCE * (1.0 + row_norms)
        if not np.any(keep):
            return theta
        inv = 1.0 / dist[keep]
        grad = inv @ diff[keep]
        grad_norm = float(np.sqrt(grad * grad @ grid.weights))
        if grad_norm <= tol * n:
            return theta
        # Weiszfeld crawls towards a minimiser that sits on a data point;
        # test the nearest one directly (subgradient condition |R| <= 1)
        k = int(np.argmin(dist))
        if _is_minimiser_at(grid, values, k, row_norms):
            return values[k].copy()
        theta = (inv @ values[keep]) / inv.sum()
    raise ConvergenceError(
        f"spatial median did not converge in {max_iter} iterations "
        f"(gradient norm {grad_norm:.3e})",
        last=theta,
        residual=grad_norm,
    )


def spatial_median(
    sample: Sequence[Curve], tol: float = 1e-8, max_iter: int = 500
) -> Curve:
    """Curve minimising the summed L2 distance to the sample.

    Raises
    ------
    ConvergenceError
        If the first-order condition is not met within ``max_iter`` steps;
        the exception carries the last iterate (values) and gradient norm.
    """
    grid, values = stack(sample)
    return Curve(grid, spatial_median_array(grid, values, tol, max_iter))
