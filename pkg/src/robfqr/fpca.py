"""Classical and spherical functional principal components."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import DegenerateSampleError
from .funcspace import Curve, Grid, Surface, check_same_grid, is_symmetric, norms, stack
from .rho import C0, B, m_scale_rows
from .robust_center import spatial_median_array

log = logging.getLogger(__name__)

Method = Literal["classical", "spherical"]
COINCIDENCE = 1e-12


@dataclass(frozen=True, eq=False)
class PcaBasis:
    """Center, ordered orthonormal directions and their variance scales."""

    center: Curve
    directions: tuple[Curve, ...]
    scales: np.ndarray
    method: Method
    _phi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.directions) != len(self.scales):
            raise ValueError("one scale per direction required")
        check_same_grid(self.center.grid, *(d.grid for d in self.directions))
        scales = np.array(self.scales, dtype=float)
        scales.setflags(write=False)
        object.__setattr__(self, "directions", tuple(self.directions))
        object.__setattr__(self, "scales", scales)
        phi = np.vstack([d.values for d in self.directions]) if self.directions else (
            np.empty((0, len(self.grid)))
        )
        phi.setflags(write=False)
        object.__setattr__(self, "_phi", phi)

    @property
    def grid(self) -> Grid:
        return self.center.grid

    @property
    def phi(self) -> np.ndarray:
        """Directions as an m x M matrix."""
        return self._phi

    def __len__(self):
        return len(self.directions)


def _centered(sample, center):
    grid, values = stack(sample)
    check_same_grid(grid, center.grid)
    return grid, values - center.values


def sample_covariance(sample: Sequence[Curve], center: Curve) -> Surface:
    """(1/n) sum of (X_i - center)(s) (X_i - center)(t)."""
    if len(sample) < 2:
        raise DegenerateSampleError("covariance needs at least 2 curves")
    grid, d = _centered(sample, center)
    k = d.T @ d / d.shape[0]
    return Surface(grid, 0.5 * (k + k.T), symmetric=True)


def sign_covariance_array(grid: Grid, d: np.ndarray, center_norm: float = 0.0) -> np.ndarray:
    """Sign covariance of already-centered rows ``d``."""
    dist = norms(grid, d)
    keep = dist >= COINCIDENCE * (1.0 + center_norm)
    dropped = int(d.shape[0] - keep.sum())
    if not np.any(keep):
        raise DegenerateSampleError("every curve coincides with the center")
    if dropped:
        log.warning("sign covariance: dropped %d curve(s) at the center", dropped)
    y = d[keep] / dist[keep, None]
    k = y.T @ y / y.shape[0]
    return 0.5 * (k + k.T)


def sign_covariance(sample: Sequence[Curve], center: Curve) -> Surface:
    """Covariance of the centered curves projected onto the unit sphere.

    Curves within the coincidence threshold of ``center`` are left out and the
    average is taken over the remaining ones, so the weighted trace is 1.
    """
    if len(sample) < 2:
        raise DegenerateSampleError("sign covariance needs at least 2 curves")
    grid, d = _centered(sample, center)
    return Surface(grid, sign_covariance_array(grid, d, center.norm()), symmetric=True)


def _fix_sign(vecs: np.ndarray) -> np.ndarray:
    # largest |entry| positive; argmax returns the earliest index on ties
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def eigen_array(grid: Grid, k: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-``m`` eigenpairs of the integral operator with kernel ``k``.

    Returns (m x M directions, eigenvalues), directions orthonormal under the
    grid's quadrature.
    """
    size = len(grid)
    if not 1 <= m <= size:
        raise ValueError(f"m must lie in [1, {size}]")
    if not is_symmetric(k):
        raise ValueError("kernel is not symmetric")
    sw = np.sqrt(grid.weights)
    a = sw[:, None] * k * sw[None, :]
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    order = np.argsort(vals, kind="stable")[::-1][:m]
    phi = _fix_sign(vecs[:, order] / sw[:, None])
    return phi.T, vals[order]


def eigen_directions(k: Surface, m: int) -> tuple[list[Curve], np.ndarray]:
    """Leading ``m`` eigenfunctions and eigenvalues of a symmetric kernel."""
    phi, vals = eigen_array(k.grid, k.values, m)
    return [Curve(k.grid, row) for row in phi], vals


def robust_scale_of_scores(scores) -> float:
    """Squared bisquare M-scale (c = 1.54764, b = 1/2) of projected data."""
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size < 2:
        raise ValueError("need at least 2 scores")
    return float(m_scale_rows(scores[None, :], C0, B)[0] ** 2)


def build_basis_array(
    grid: Grid,
    values: np.ndarray,
    method: Method = "spherical",
    m: int | None = None,
    center: np.ndarray | None = None,
) -> PcaBasis:
    """Array-level :func:`build_basis`."""
    n, size = values.shape
    if n < 2:
        raise DegenerateSampleError("a basis needs at least 2 curves")
    m = size if m is None else m
    if method == "classical":
        mu = values.mean(axis=0) if center is None else np.asarray(center, float)
        d = values - mu
        spread = COINCIDENCE * (1.0 + float(norms(grid, mu[None, :])[0]))
        if not np.any(norms(grid, d) > spread):
            raise DegenerateSampleError("sample has no spread")
        k = d.T @ d / n
        phi, scales = eigen_array(grid, 0.5 * (k + k.T), m)
        scales = np.maximum(scales, 0.0)
    elif method == "spherical":
        mu = spatial_median_array(grid, values) if center is None else np.asarray(center, float)
        d = values - mu
        k = sign_covariance_array(grid, d, float(norms(grid, mu[None, :])[0]))
        phi, _ = eigen_array(grid, k, m)
        scores = (d * grid.weights) @ phi.T
        scales = m_scale_rows(scores.T, C0, B) ** 2
        order = np.argsort(-scales, kind="stable")
        phi, scales = phi[order], scales[order]
    else:
        raise ValueError(f"unknown method {method!r}")
    return PcaBasis(
        Curve(grid, mu), tuple(Curve(grid, row) for row in phi), scales, method
    )


def build_basis(
    sample: Sequence[Curve],
    method: Method = "spherical",
    m: int | None = None,
    center_override: Curve | None = None,
) -> PcaBasis:
    """Principal directions of a sample.

    ``classical`` centers at the pointwise mean and uses covariance
    eigenvalues as scales.  ``spherical`` centers at the spatial median, takes
    directions from the sign covariance, scores each direction by the squared
    M-scale of its projections and re-sorts by that scale.  ``m`` defaults to
    the grid size (all directions).
    """
    grid, values = stack(sample)
    center = None
    if center_override is not None:
        check_same_grid(grid, center_override.grid)
        center = center_override.values
    return build_basis_array(grid, values, method, m, center)


def select_dimension(scales, threshold: float = 0.9) -> int:
    """Smallest p whose leading scales explain ``threshold`` of the total."""
    scales = np.asarray(scales, dtype=float)
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    if np.any(scales < 0):
        raise ValueError("scales must be non-negative")
    total = scales.sum()
    if not total > 0:
        raise DegenerateSampleError("all scales are zero")
    frac = np.cumsum(scales) / total
    # guard against the last cumulative fraction rounding just below 1
    hits = np.flatnonzero(frac >= threshold * (1 - 1e-12))
    return int(hits[0]) + 1 if hits.size else scales.size


def project_scores_array(grid: Grid, values: np.ndarray, basis: PcaBasis, p: int) -> np.ndarray:
    if not 1 <= p <= len(basis):
        raise ValueError(f"p must lie in [1, {len(basis)}]")
    return ((values - basis.center.values) * grid.weights) @ basis.phi[:p].T


def project_scores(sample: Sequence[Curve], basis: PcaBasis, p: int) -> np.ndarray:
    """n x p matrix of centered scores <X_i - center, phi_j>."""
    grid, values = stack(sample)
    check_same_grid(grid, basis.grid)
    return project_scores_array(grid, values, basis, p)
