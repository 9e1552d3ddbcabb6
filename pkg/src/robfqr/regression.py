"""Robust MM-estimation of the functional quadratic regression model.

The response is regressed on the principal-direction scores x_i and their
pairwise products z_i = vech(x_i x_i^T); the fitted coefficients are mapped
back to a slope curve and a symmetric quadratic kernel.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import ConvergenceError, SingularDesignError
from .fpca import PcaBasis, build_basis_array, project_scores_array, select_dimension
from .funcspace import Curve, Grid, Surface, check_same_grid, inner_product, quadratic_form, stack
from .rho import RhoConfig, m_scale_rows, rho, weights

log = logging.getLogger(__name__)

N_SUB = 500
N_BEST = 5
I_STEPS = 2
MM_TOL = 1e-7
MM_MAX_ITER = 500
S_MAX_ITER = 500


def vech_pairs(p: int) -> list[tuple[int, int]]:
    """Index pairs (row, col), row >= col, of the lower triangle stacked by column."""
    return [(j, l) for l in range(p) for j in range(l, p)]


def n_quadratic(p: int) -> int:
    return p * (p + 1) // 2


def vech_products(x: np.ndarray) -> np.ndarray:
    """Rows z_i = vech(x_i x_i^T) for an n x p score matrix."""
    x = np.atleast_2d(x)
    rows, cols = np.tril_indices(x.shape[1])
    # tril_indices walks row-major; reorder to column-major stacking
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    return x[:, rows] * x[:, cols]


def vech(mat: np.ndarray) -> np.ndarray:
    """Half-vectorisation of a square matrix (lower triangle, column by column)."""
    mat = np.asarray(mat)
    return np.array([mat[j, l] for j, l in vech_pairs(mat.shape[0])])


def unvech_u(u, p: int) -> np.ndarray:
    """Symmetric matrix V with v_jj = u_jj and v_jl = u_jl / 2 off the diagonal."""
    v = np.zeros((p, p))
    for k, (j, l) in enumerate(vech_pairs(p)):
        val = u[k] if j == l else u[k] / 2.0
        v[j, l] = v[l, j] = val
    return v


def u_from_v(v: np.ndarray) -> np.ndarray:
    """u = vech((2 - 1{j=l}) v_jl)."""
    return np.array([(1.0 if j == l else 2.0) * v[j, l] for j, l in vech_pairs(v.shape[0])])


@dataclass(frozen=True, eq=False)
class CoefVector:
    """Intercept ``a``, slope coordinates ``b`` and quadratic coordinates ``u``."""

    a: float
    b: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.array(self.b, dtype=float))
        u = np.atleast_1d(np.array(self.u, dtype=float))
        if u.size != n_quadratic(b.size):
            raise ValueError(f"u has {u.size} entries, expected {n_quadratic(b.size)}")
        b.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "u", u)

    @property
    def p(self) -> int:
        return self.b.size

    @property
    def v(self) -> np.ndarray:
        return unvech_u(self.u, self.p)

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.a], self.b, self.u])

    @classmethod
    def from_array(cls, theta, p: int) -> "CoefVector":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[0], theta[1 : 1 + p], theta[1 + p :])


@dataclass(frozen=True)
class Design:
    """Score block ``x`` (n x p) and product block ``z`` (n x q)."""

    x: np.ndarray
    z: np.ndarray
    centered: bool = True

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """Full regressor matrix [1, x, z]."""
        return np.column_stack([np.ones(self.n), self.x, self.z])

    def residuals(self, y, coef: CoefVector) -> np.ndarray:
        return np.asarray(y, dtype=float) - self.matrix @ coef.as_array()


def build_design(scores, centered: bool = True) -> Design:
    x = np.atleast_2d(np.asarray(scores, dtype=float))
    if x.shape[1] < 1:
        raise ValueError("need at least one score column")
    return Design(x, vech_products(x), centered)


# -- fitting primitives ------------------------------------------------------


def _wls(X, y, w):
    """Weighted least squares; raises on rank deficiency."""
    sw = np.sqrt(w)
    A = X * sw[:, None]
    theta, _, rank, _ = np.linalg.lstsq(A, y * sw, rcond=None)
    if rank < X.shape[1]:
        raise SingularDesignError("weighted normal equations are singular")
    return theta


def ls_fit(d: Design, y) -> tuple[CoefVector, float]:
    """Ordinary least squares on [1, x, z].

    The residual scale uses the n - (1 + p + q) degrees-of-freedom divisor.
    """
    y = np.asarray(y, dtype=float)
    X = d.matrix
    n, k = X.shape
    if n <= k:
        raise SingularDesignError(f"need more than {k} observations, got {n}")
    theta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < k:
        raise SingularDesignError("design is rank deficient")
    r = y - X @ theta
    sigma = float(np.sqrt(r @ r / (n - k)))
    return CoefVector.from_array(theta, d.p), sigma


def _scale(r, cfg, dof, start=None):
    return float(m_scale_rows(r[None, :], cfg.c0, cfg.b, dof, start=start)[0])


def _fitted_step(X, delta, scale):
    return float(np.sqrt(np.mean((X @ delta) ** 2))) / scale


def _refine_s(X, y, theta, cfg, dof, max_iter=S_MAX_ITER, tol=MM_TOL):
    """IRLS on the M-scale: alternate the scale and bisquare-weighted LS."""
    r = y - X @ theta
    s = _scale(r, cfg, dof)
    for _ in range(max_iter):
        if s == 0.0:
            return theta, 0.0
        w = weights(r / s, cfg.c0)
        try:
            new = _wls(X, y, w)
        except SingularDesignError:
            return theta, s
        r_new = y - X @ new
        s_new = _scale(r_new, cfg, dof, start=s)
        if s_new > s:
            # the weighted step must not increase the scale
            return theta, s
        # step measured on fitted values against the scale: invariant to
        # shifting and rescaling the response
        step = _fitted_step(X, new - theta, s)
        theta, r, s = new, r_new, s_new
        if step <= tol:
            break
    return theta, s


def _elemental_fits(X, y, n_sub, rng):
    n, k = X.shape
    idx = np.stack([rng.choice(n, size=k, replace=False) for _ in range(n_sub)])
    A = X[idx]
    u, sv, vt = np.linalg.svd(A)
    ok = sv[:, -1] > 1e-10 * sv[:, 0]
    inv_s = np.where(ok[:, None], 1.0 / np.where(sv > 0, sv, 1.0), 0.0)
    rhs = np.einsum("cij,ci->cj", u, y[idx])
    theta = np.einsum("cji,cj->ci", vt, inv_s * rhs)
    return theta, ok


def _i_steps(X, y, theta, cfg, dof, steps):
    """Cheap concentration steps on a batch of candidates (rows of ``theta``)."""
    denom = X.shape[0] - dof
    r = y[None, :] - theta @ X.T
    s = np.median(np.abs(r), axis=1) / 0.6745
    # a zero start scale means an exact fit to most points; keep it as is
    live = np.flatnonzero(s > 0)
    for _ in range(steps):
        if live.size == 0:
            break
        rl, sl = r[live], s[live]
        sl = sl * np.sqrt(rho(rl / sl[:, None], cfg.c0).sum(axis=1) / denom / cfg.b)
        w = weights(rl / sl[:, None], cfg.c0)
        XtW = X.T[None, :, :] * w[:, None, :]
        lhs = XtW @ X
        rhs = XtW @ y
        for j, c in enumerate(live):
            try:
                theta[c] = np.linalg.solve(lhs[j], rhs[j])
            except np.linalg.LinAlgError:
                pass
        s[live] = sl
        r = y[None, :] - theta @ X.T
    return theta, m_scale_rows(r, cfg.c0, cfg.b, dof, tol=1e-6, polish=False)


def s_estimate(
    d: Design,
    y,
    cfg: RhoConfig | None = None,
    n_sub: int = N_SUB,
    seed=None,
) -> tuple[CoefVector, float]:
    """S-regression: coefficients minimising the residual M-scale.

    Fast-S search: ``n_sub`` elemental subsamples of size 1 + p + q, each
    improved by two concentration steps; the best five plus the LS fit are
    iterated to convergence and the smallest scale wins (ties go to the
    lowest candidate index, LS counting last).  The scale uses the
    n - (p + q) divisor.
    """
    cfg = cfg or RhoConfig()
    y = np.asarray(y, dtype=float)
    X = d.matrix
    n, k = X.shape
    dof = d.p + d.q
    if n <= k:
        raise SingularDesignError(f"S-estimation needs n > {k}, got {n}")
    if n_sub < 1:
        raise ValueError("n_sub must be >= 1")
    rng = np.random.default_rng(seed)
    theta, ok = _elemental_fits(X, y, n_sub, rng)
    cand_idx = np.flatnonzero(ok)
    starts: list[tuple[int, np.ndarray]] = []
    if cand_idx.size:
        th, sc = _i_steps(X, y, theta[cand_idx].copy(), cfg, dof, I_STEPS)
        best = np.lexsort((cand_idx, sc))[:N_BEST]
        starts = [(int(cand_idx[i]), th[i]) for i in best]
    try:
        ls_theta = ls_fit(d, y)[0].as_array()
        starts.append((n_sub, ls_theta))
    except SingularDesignError:
        pass
    if not starts:
        raise SingularDesignError("every elemental subsample and the LS fit are singular")

    y_size = float(np.max(np.abs(y - np.median(y))))
    results = []
    for index, th in starts:
        th, s = _refine_s(X, y, th, cfg, dof)
        s = _scale(y - X @ th, cfg, dof)
        if s <= 1e-10 * y_size:
            s = 0.0
        results.append((s, index, th))
    s, _, th = min(results, key=lambda t: (t[0], t[1]))
    return CoefVector.from_array(th, d.p), s


def mm_loss(d: Design, y, coef: CoefVector, sigma: float, c: float) -> float:
    return float(np.sum(rho(d.residuals(y, coef) / sigma, c)))


def mm_fit(
    d: Design,
    y,
    sigma: float,
    init: CoefVector,
    cfg: RhoConfig | None = None,
    tol: float = MM_TOL,
    max_iter: int = MM_MAX_ITER,
) -> CoefVector:
    """Bisquare M-regression with fixed scale ``sigma``, by IRLS from ``init``."""
    cfg = cfg or RhoConfig()
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    y = np.asarray(y, dtype=float)
    X = d.matrix
    theta = init.as_array()
    r = y - X @ theta
    if not np.any(r):
        return init
    for _ in range(max_iter):
        new = _wls(X, y, weights(r / sigma, cfg.c1))
        step = _fitted_step(X, new - theta, sigma)
        theta = new
        r = y - X @ theta
        if step <= tol:
            break
    else:
        raise ConvergenceError(
            f"MM iterations did not converge in {max_iter} steps",
            last=CoefVector.from_array(theta, d.p),
            residual=float(step),
        )
    out = CoefVector.from_array(theta, d.p)
    if mm_loss(d, y, out, sigma, cfg.c1) > mm_loss(d, y, init, sigma, cfg.c1) + 1e-12:
        return init
    return out


# -- mapping coefficients to functions ---------------------------------------


def assemble_array(coef: CoefVector, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = coef.p
    phi = phi[:p]
    beta = coef.b @ phi
    ups = phi.T @ coef.v @ phi
    return beta, 0.5 * (ups + ups.T)


def assemble(coef: CoefVector, basis: PcaBasis, p: int | None = None) -> tuple[Curve, Surface]:
    """Slope curve sum_j b_j phi_j and kernel sum_jl v_jl phi_j(s) phi_l(t)."""
    p = coef.p if p is None else p
    if p != coef.p or p > len(basis):
        raise ValueError("coefficient length does not match p / basis")
    beta, ups = assemble_array(coef, basis.phi)
    return Curve(basis.grid, beta), Surface(basis.grid, ups, symmetric=True)


def center_scores(basis: PcaBasis, p: int) -> np.ndarray:
    """Coordinates <center, phi_j> of the basis center."""
    return (basis.center.values * basis.grid.weights) @ basis.phi[:p].T


def to_centered(coef: CoefVector, basis: PcaBasis, p: int | None = None) -> CoefVector:
    """Map uncentered (a, b, u) to the centered-model coordinates (a*, b*, u)."""
    p = coef.p if p is None else p
    mu = center_scores(basis, p)
    v = coef.v
    return CoefVector(coef.a + coef.b @ mu + mu @ v @ mu, coef.b + 2.0 * v @ mu, coef.u)


def from_centered(coef: CoefVector, basis: PcaBasis, p: int | None = None) -> CoefVector:
    """Inverse of :func:`to_centered`."""
    p = coef.p if p is None else p
    mu = center_scores(basis, p)
    v = coef.v
    return CoefVector(coef.a - coef.b @ mu + mu @ v @ mu, coef.b - 2.0 * v @ mu, coef.u)


# -- end-to-end --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FitResult:
    """Fitted model.

    ``coef`` holds the coefficients fitted on the centered scores, giving the
    centered-model intercept and slope ``alpha_star``/``beta_star``.
    ``alpha``/``beta`` are the same fit expressed for the raw curves
    (``alpha + <beta, x> + <x, upsilon x>``); the two forms predict
    identically.
    """

    alpha: float
    beta: Curve
    alpha_star: float
    beta_star: Curve
    upsilon: Surface
    sigma: float
    coef: CoefVector
    basis: PcaBasis
    p: int
    scores: np.ndarray
    residuals: np.ndarray
    weights: np.ndarray
    method: Literal["ls", "mm"]
    init_coef: CoefVector | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.basis.grid

    @property
    def mu_scores(self) -> np.ndarray:
        return center_scores(self.basis, self.p)


def fit_arrays(
    grid: Grid,
    values: np.ndarray,
    y,
    method: Literal["ls", "mm"] = "mm",
    p: int | str = "auto",
    threshold: float = 0.9,
    cfg: RhoConfig | None = None,
    n_sub: int = N_SUB,
    seed=None,
) -> FitResult:
    """Array-level :func:`fit`; ``values`` is the n x M curve matrix."""
    cfg = cfg or RhoConfig()
    y = np.asarray(y, dtype=float)
    n = values.shape[0]
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    if method not in ("ls", "mm"):
        raise ValueError(f"unknown method {method!r}")
    # work in a canonical row order so the result does not depend on how the
    # observations were listed (sums and subsample draws are order-sensitive)
    order = np.lexsort(np.column_stack([values, y]).T[::-1])
    values, y = values[order], y[order]
    back = np.empty_like(order)
    back[order] = np.arange(n)
    basis = build_basis_array(grid, values, "spherical" if method == "mm" else "classical")
    if p == "auto":
        p = select_dimension(basis.scales, threshold)
    p = int(p)
    if not 1 <= p <= len(basis):
        raise ValueError(f"p must lie in [1, {len(basis)}]")
    k = 1 + p + n_quadratic(p)
    if n <= k:
        raise SingularDesignError(f"p={p} needs more than {k} observations, got {n}")
    scores = project_scores_array(grid, values, basis, p)
    design = build_design(scores, centered=True)
    init = None
    if method == "ls":
        coef, sigma = ls_fit(design, y)
        w = np.ones(n)
    else:
        init, sigma = s_estimate(design, y, cfg, n_sub, seed)
        if sigma == 0.0:
            coef = init
            w = np.ones(n)
        else:
            coef = mm_fit(design, y, sigma, init, cfg)
            w = weights(design.residuals(y, coef) / sigma, cfg.c1)
    beta_star, ups = assemble_array(coef, basis.phi)
    raw = from_centered(coef, basis, p)
    beta, _ = assemble_array(raw, basis.phi)
    return FitResult(
        alpha=raw.a,
        beta=Curve(grid, beta),
        alpha_star=coef.a,
        beta_star=Curve(grid, beta_star),
        upsilon=Surface(grid, ups, symmetric=True),
        sigma=float(sigma),
        coef=coef,
        basis=basis,
        p=p,
        scores=scores[back],
        residuals=design.residuals(y, coef)[back],
        weights=w[back],
        method=method,
        init_coef=init,
    )


def fit(
    sample: Sequence[Curve],
    y,
    method: Literal["ls", "mm"] = "mm",
    p: int | str = "auto",
    threshold: float = 0.9,
    cfg: RhoConfig | None = None,
    n_sub: int = N_SUB,
    seed=None,
) -> FitResult:
    """Fit the centered functional quadratic model.

    ``mm`` uses spherical principal directions and an MM-regression on the
    centered scores; ``ls`` uses classical directions and least squares.
    ``p="auto"`` picks the smallest dimension explaining ``threshold`` of the
    total (robust) variation.
    """
    grid, values = stack(sample)
    return fit_arrays(grid, values, y, method, p, threshold, cfg, n_sub, seed)


def predict(fit: FitResult, x: Curve) -> float:
    """alpha* + <x - center, beta*> + <x - center, upsilon (x - center)>."""
    check_same_grid(fit.grid, x.grid)
    xc = x - fit.basis.center
    return fit.alpha_star + inner_product(xc, fit.beta_star) + quadratic_form(fit.upsilon, xc)


def predict_array(fit: FitResult, values: np.ndarray) -> np.ndarray:
    """Vectorised :func:`predict` over the rows of ``values``."""
    w = fit.grid.weights
    d = (np.atleast_2d(values) - fit.basis.center.values) * w
    return fit.alpha_star + d @ fit.beta_star.values + np.einsum("im,ml,il->i", d, fit.upsilon.values, d)
