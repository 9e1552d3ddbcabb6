"""Tukey bisquare loss and M-scale estimation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import RobFQRError

C0 = 1.54764
C1 = 3.444
B = 0.5


@dataclass(frozen=True)
class RhoConfig:
    """Tuning of the bisquare losses.

    ``c0`` and ``b`` calibrate the S-step scale (normal consistency with a
    50% breakdown point); ``c1`` sets the efficiency of the M-step.
    """

    c0: float = C0
    b: float = B
    c1: float = C1

    def __post_init__(self):
        if not (self.c0 > 0 and self.c1 > 0):
            raise ValueError("tuning constants must be positive")
        if not self.c1 > self.c0:
            raise ValueError("c1 must exceed c0")
        if not 0 < self.b < 1:
            raise ValueError("b must lie in (0, 1)")


def rho(t, c: float):
    """Bisquare loss normalised to saturate at 1 for |t| >= c."""
    if c <= 0:
        raise ValueError("c must be positive")
    u = np.minimum((np.asarray(t, dtype=float) / c) ** 2, 1.0)
    out = 1.0 - (1.0 - u) ** 3
    return float(out) if np.ndim(out) == 0 else out


def psi(t, c: float):
    """Derivative of :func:`rho`."""
    t = np.asarray(t, dtype=float)
    u = (t / c) ** 2
    out = np.where(u < 1.0, 6.0 * t / c**2 * (1.0 - u) ** 2, 0.0)
    return float(out) if out.ndim == 0 else out


def weights(t, c: float):
    """IRLS weights psi(t)/t, equal to 6/c^2 at t = 0."""
    u = (np.asarray(t, dtype=float) / c) ** 2
    out = np.where(u < 1.0, 6.0 / c**2 * (1.0 - u) ** 2, 0.0)
    return float(out) if out.ndim == 0 else out


def _rho_mean(r, s, c, denom):
    return rho(r / s, c).sum(axis=-1) / denom


def m_scale_rows(
    r: np.ndarray,
    c: float = C0,
    b: float = B,
    dof: int = 0,
    tol: float = 1e-10,
    max_iter: int = 200,
    start=None,
    polish: bool = True,
) -> np.ndarray:
    """M-scale of every row of ``r``.

    Solves ``sum(rho(r_i / s, c)) / (n - dof) = b`` by the fixed-point step
    ``s <- s * sqrt(mean_rho / b)`` started at median|r| / 0.6745, then
    polishes with guarded Newton steps.  Rows with no positive solution
    (too many exact zeros) get scale 0.  ``start`` optionally warm-starts
    the iteration (one positive value per row).
    """
    r = np.abs(np.atleast_2d(np.asarray(r, dtype=float)))
    n = r.shape[1]
    denom = n - dof
    if denom <= 0:
        raise ValueError(f"need more observations ({n}) than dof ({dof})")
    if np.any(np.isnan(r)) or np.any(np.all(np.isinf(r), axis=1)):
        raise ValueError("residuals must not be NaN or all infinite")
    target = b * denom
    nonzero = np.count_nonzero(r, axis=1)
    out = np.zeros(r.shape[0])
    live = nonzero > target
    if not np.any(live):
        return out
    rr = r[live]
    if start is not None:
        s = np.broadcast_to(np.asarray(start, dtype=float), (r.shape[0],))[live].copy()
    else:
        s = np.median(rr, axis=1) / 0.6745
    bad = ~(s > 0)
    if np.any(bad):
        pos = np.where(rr[bad] > 0, rr[bad], np.nan)
        s[bad] = np.nanmedian(pos, axis=1)
    s = np.where(np.isfinite(s), s, np.nanmax(np.where(np.isinf(rr), np.nan, rr), axis=1))
    active = np.ones(s.size, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ratio = _rho_mean(rr[idx], s[idx, None], c, denom) / b
        new = s[idx] * np.sqrt(ratio)
        done = np.abs(new - s[idx]) <= tol * s[idx]
        s[idx] = new
        active[idx[done]] = False
    if polish:
        s = _polish(rr, s, c, b, denom)
    out[live] = s
    return out


def _polish(rr, s, c, b, denom):
    """Newton steps on f(s) = mean rho(r/s) - b; bisection fallback."""
    for k in range(s.size):
        r, sk = rr[k], s[k]
        f = _rho_mean(r, sk, c, denom) - b
        for _ in range(3):
            if f == 0.0:
                break
            fprime = -np.sum(psi(r / sk, c) * r) / (sk**2 * denom)
            if fprime >= 0 or not np.isfinite(fprime):
                break
            cand = sk - f / fprime
            if not cand > 0:
                break
            fc = _rho_mean(r, cand, c, denom) - b
            if abs(fc) >= abs(f):
                break
            sk, f = cand, fc
        if abs(f) > 1e-9:
            sk = _bracket(r, sk, c, b, denom)
        s[k] = sk
    return s


def _bracket(r, s, c, b, denom):
    g = lambda x: _rho_mean(r, x, c, denom) - b  # noqa: E731
    lo, hi = s, s
    while g(lo) < 0:
        lo /= 2.0
    while g(hi) > 0:
        hi *= 2.0
    if lo == hi:
        return lo
    return brentq(g, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)


def m_scale(r, cfg: RhoConfig | None = None, dof: int = 0) -> float:
    """M-scale of a residual vector with the S-step tuning of ``cfg``.

    Returns 0 when no positive solution exists (e.g. all residuals zero).
    """
    cfg = cfg or RhoConfig()
    r = np.asarray(r, dtype=float).ravel()
    if r.size <= dof:
        raise RobFQRError(f"m_scale needs n > dof, got n={r.size}, dof={dof}")
    return float(m_scale_rows(r[None, :], cfg.c0, cfg.b, dof)[0])
