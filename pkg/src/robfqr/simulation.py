"""Monte Carlo study: data generators, contamination schemes and error metrics.

Two covariate models are provided.  Model 1 is a 50-term cosine-basis
Gaussian process with score variances j^-2; Model 2 is a two-component
process on -sqrt(2)cos(pi t), sqrt(2)sin(pi t) with score variances 4 and 1.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import RobFQRError
from .funcspace import Curve, Grid, Surface
from .regression import fit_arrays
from .rho import RhoConfig

log = logging.getLogger(__name__)

N_TERMS = 50
CONTAMINATION_RATE = 0.10
FAILURE_LIMIT = 0.02

# independent random streams per replication
STREAM_SCORES = 0
STREAM_ERRORS = 1
STREAM_FLAGS = 2
STREAM_CONTAM = 3
STREAM_FIT = 4

MODEL1_UPSILON = ("U00", "U01", "U02")
MODEL2_UPSILON = ("linear", "quadratic")


@dataclass(frozen=True)
class Contamination:
    """A contamination scheme C0..C3 with its parameters."""

    kind: Literal["C0", "C1", "C2", "C3"] = "C0"
    mu: float | None = None
    delta: float | None = None

    def __str__(self):
        parts = [f"{k}={v:g}" for k, v in (("mu", self.mu), ("delta", self.delta)) if v is not None]
        return self.kind + (":" + ",".join(parts) if parts else "")

    @classmethod
    def parse(cls, spec: str) -> "Contamination":
        """Parse ``C0``, ``C1:mu=12`` or ``C3:mu=4,delta=0.4``."""
        kind, _, rest = spec.strip().partition(":")
        kind = kind.upper()
        if kind not in ("C0", "C1", "C2", "C3"):
            raise ValueError(f"unknown contamination scheme {spec!r}")
        params = {}
        if rest:
            for item in rest.split(","):
                key, eq, val = item.partition("=")
                key = key.strip().lower()
                if not eq or key not in ("mu", "delta"):
                    raise ValueError(f"bad contamination parameter {item!r} in {spec!r}")
                try:
                    params[key] = float(val)
                except ValueError:
                    raise ValueError(f"non-numeric value in {spec!r}") from None
        return cls(kind, **params)


@dataclass(frozen=True)
class ScenarioConfig:
    model: Literal["model1", "model2"] = "model1"
    upsilon_choice: str = "U00"
    contamination: Contamination = field(default_factory=Contamination)
    n: int = 300
    n_reps: int = 100
    grid_size: int = 100
    seed: int = 20240101

    def __post_init__(self):
        if self.model not in ("model1", "model2"):
            raise ValueError(f"unknown model {self.model!r}")
        choices = MODEL1_UPSILON if self.model == "model1" else MODEL2_UPSILON
        if self.upsilon_choice not in choices:
            raise ValueError(f"{self.model} quadratic operator must be one of {choices}")
        c = self.contamination
        if c.kind in ("C1", "C2", "C3") and c.mu is None:
            raise ValueError(f"{c.kind} requires mu")
        if c.kind == "C3" and self.model == "model1" and c.delta is None:
            raise ValueError("model 1 C3 requires delta")
        if c.kind == "C3" and self.model == "model2" and c.delta is not None:
            raise ValueError("model 2 C3 takes mu only")
        if c.kind != "C3" and c.delta is not None:
            raise ValueError(f"{c.kind} takes no delta")
        if self.n < 1 or self.n_reps < 1 or self.grid_size < 3:
            raise ValueError("need n >= 1, n_reps >= 1 and grid_size >= 3")

    def label(self) -> str:
        return (
            f"{self.model}/{self.upsilon_choice}/{self.contamination}"
            f"/n={self.n}"
        )


@dataclass(frozen=True, eq=False)
class TruthSet:
    alpha0: float
    beta0: Curve
    upsilon0: Surface
    sigma0: float
    # covariate basis (rows) and score standard deviations
    basis: np.ndarray = field(repr=False, default=None)
    score_sd: np.ndarray = field(repr=False, default=None)

    @property
    def grid(self) -> Grid:
        return self.beta0.grid

    def regression_function(self, values: np.ndarray) -> np.ndarray:
        """alpha0 + <beta0, X> + <X, upsilon0 X> by quadrature, row-wise."""
        wx = np.atleast_2d(values) * self.grid.weights
        return (
            self.alpha0
            + wx @ self.beta0.values
            + np.einsum("im,ml,il->i", wx, self.upsilon0.values, wx)
        )


def model1_basis(t: np.ndarray, n_terms: int = N_TERMS) -> np.ndarray:
    """Rows phi_1 = 1, phi_j = sqrt(2) cos((j - 1) pi t)."""
    j = np.arange(n_terms)[:, None]
    phi = np.sqrt(2.0) * np.cos(j * np.pi * t[None, :])
    phi[0] = 1.0
    return phi


def model1_coefficients(n_terms: int = N_TERMS) -> np.ndarray:
    j = np.arange(1, n_terms + 1, dtype=float)
    b = 4.0 * (-1.0) ** (j + 1) * j**-2
    b[0] = 0.3
    return b


def truth_model1(upsilon_choice: str, grid: Grid) -> TruthSet:
    """True parameters of Model 1 (sigma0 = 1, alpha0 = 0)."""
    if not grid.is_uniform:
        raise ValueError("Model 1 needs a uniform grid")
    phi = model1_basis(grid.points)
    b0 = model1_coefficients()
    beta = b0 @ phi
    if upsilon_choice == "U00":
        ups = np.zeros((len(grid), len(grid)))
    elif upsilon_choice == "U01":
        ups = 5.0 * np.outer(beta, beta)
    elif upsilon_choice == "U02":
        j = np.arange(1, 6, dtype=float)
        b2 = 3.0 * (-1.0) ** (j + 1) * j**-2
        b2[:2] = 0.3
        g = b2 @ phi[0:10:2]
        ups = 5.0 * np.outer(g, g)
    else:
        raise ValueError(f"Model 1 operator must be one of {MODEL1_UPSILON}")
    return TruthSet(
        0.0,
        Curve(grid, beta),
        Surface(grid, ups, symmetric=True),
        1.0,
        basis=phi,
        score_sd=1.0 / np.arange(1, N_TERMS + 1),
    )


def model2_basis(t: np.ndarray) -> np.ndarray:
    return np.vstack([-np.sqrt(2.0) * np.cos(np.pi * t), np.sqrt(2.0) * np.sin(np.pi * t)])


def truth_model2(upsilon_choice: str, grid: Grid) -> TruthSet:
    """True parameters of Model 2 (sigma0 = 0.5, alpha0 = 0)."""
    phi1, phi2 = model2_basis(grid.points)
    if upsilon_choice == "linear":
        beta = 2.0 * phi1 + 0.5 * phi2
        ups = np.zeros((len(grid), len(grid)))
    elif upsilon_choice == "quadratic":
        beta = phi1 + phi2
        ups = (
            np.outer(phi1, phi1)
            + np.outer(phi2, phi2)
            + 0.5 * (np.outer(phi1, phi2) + np.outer(phi2, phi1))
        )
    else:
        raise ValueError(f"Model 2 operator must be one of {MODEL2_UPSILON}")
    return TruthSet(
        0.0,
        Curve(grid, beta),
        Surface(grid, 0.5 * (ups + ups.T), symmetric=True),
        0.5,
        basis=np.vstack([phi1, phi2]),
        score_sd=np.array([2.0, 1.0]),
    )


def make_truth(cfg: ScenarioConfig) -> TruthSet:
    grid = Grid.uniform(cfg.grid_size)
    if cfg.model == "model1":
        return truth_model1(cfg.upsilon_choice, grid)
    return truth_model2(cfg.upsilon_choice, grid)


def rep_rng(seed: int, rep_index: int, stream: int) -> np.random.Generator:
    """Generator keyed by (seed, replication, stream)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep_index, stream)))


@dataclass(frozen=True, eq=False)
class Sample:
    values: np.ndarray
    y: np.ndarray
    flags: np.ndarray
    y_clean: np.ndarray
    errors: np.ndarray


def generate_sample(
    cfg: ScenarioConfig,
    truth: TruthSet,
    rep_index: int,
    sigma0: float | None = None,
    flags: np.ndarray | None = None,
) -> Sample:
    """One replication of covariates and responses.

    ``flags`` overrides the Bernoulli(0.1) contamination indicators (used to
    check that an all-zero draw reproduces the clean stream).
    """
    n = cfg.n
    sigma0 = truth.sigma0 if sigma0 is None else sigma0
    scores = rep_rng(cfg.seed, rep_index, STREAM_SCORES).standard_normal((n, truth.score_sd.size))
    scores *= truth.score_sd
    eps = rep_rng(cfg.seed, rep_index, STREAM_ERRORS).standard_normal(n)
    if flags is None:
        flags = rep_rng(cfg.seed, rep_index, STREAM_FLAGS).random(n) < CONTAMINATION_RATE
    flags = np.asarray(flags, dtype=bool)
    crng = rep_rng(cfg.seed, rep_index, STREAM_CONTAM)
    c = cfg.contamination

    values = scores @ truth.basis
    y_clean = truth.regression_function(values) + sigma0 * eps
    if c.kind == "C0":
        return Sample(values, y_clean, np.zeros(n, bool), y_clean, eps)

    if c.kind == "C1":
        # error law 0.9 N(0, 1) + 0.1 N(mu, 0.5^2)
        eps_co = np.where(flags, crng.normal(c.mu, 0.5, n), eps)
        y = truth.regression_function(values) + sigma0 * eps_co
        return Sample(values, y, flags, y_clean, eps_co)

    if c.kind == "C2":
        fresh = crng.standard_normal((n, truth.score_sd.size)) * truth.score_sd
        fresh[:, 1] = crng.normal(c.mu / 2.0, 0.5, n)
        if cfg.model == "model1":
            # eps_co ~ N(mu, 0.25) enters without the sigma0 factor (sigma0 = 1)
            noise_co = crng.normal(c.mu, 0.5, n)
        else:
            # sigma0 * eps_co ~ N(mu, sigma0^2 / 4)
            noise_co = crng.normal(c.mu, sigma0 / 2.0, n)
        sc = np.where(flags[:, None], fresh, scores)
        vals = sc @ truth.basis
        noise = np.where(flags, noise_co, sigma0 * eps)
        y = truth.regression_function(vals) + noise
        return Sample(vals, y, flags, y_clean, noise / sigma0 if sigma0 else noise)

    # C3
    if cfg.model == "model1":
        fresh = c.mu + crng.standard_normal((n, truth.score_sd.size)) * truth.score_sd
        sc = np.where(flags[:, None], fresh, scores)
        y = np.where(flags, c.delta * y_clean, y_clean)
    else:
        sc = np.where(flags[:, None], 2.0 * np.abs(scores), scores)
        y = np.where(flags, 2.0 * c.mu * np.abs(y_clean), y_clean)
    return Sample(sc @ truth.basis, y, flags, y_clean, eps)


def generate(cfg: ScenarioConfig, truth: TruthSet, rep_index: int) -> tuple[list[Curve], np.ndarray]:
    """Curves and responses of replication ``rep_index``."""
    s = generate_sample(cfg, truth, rep_index)
    return [Curve(truth.grid, row) for row in s.values], s.y


# -- metrics -----------------------------------------------------------------

METRICS = ("Bias2", "MISE", "Bias2_trim", "MISE_trim")


def trim_count(size: int, trim_fraction: float) -> int:
    return int(math.floor(size * trim_fraction + 1e-9))


def _metric_values(est: np.ndarray, truth: np.ndarray, q: int) -> dict[str, float]:
    """``est`` has the replication on axis 0; remaining axes are grid axes."""
    err = est - truth[None]
    mean_err = err.mean(axis=0)
    sq = (err**2).mean(axis=0)
    out = {"Bias2": float(np.mean(mean_err**2)), "MISE": float(np.mean(sq))}
    size = truth.shape[0]
    sl = slice(q, size - q)
    inner = (sl,) * truth.ndim
    out["Bias2_trim"] = float(np.mean(mean_err[inner] ** 2))
    out["MISE_trim"] = float(np.mean(sq[inner]))
    return out


def metrics(
    estimates: Sequence[tuple[Curve, Surface]],
    truth: TruthSet,
    trim_fraction: float = 0.05,
) -> list[dict]:
    """Bias^2 and MISE of slope and kernel estimates, plain and trimmed.

    Trimming drops the first and last floor(M * trim_fraction) grid indices
    (on both axes for kernels).
    """
    if not estimates:
        raise ValueError("no estimates")
    q = trim_count(len(truth.grid), trim_fraction)
    betas = np.vstack([b.values for b, _ in estimates])
    ups = np.stack([u.values for _, u in estimates])
    rows = []
    for target, est, tv in (
        ("beta", betas, truth.beta0.values),
        ("upsilon", ups, truth.upsilon0.values),
    ):
        for metric, value in _metric_values(est, tv, q).items():
            rows.append({"target": target, "metric": metric, "value": value})
    return rows


# -- study runner ------------------------------------------------------------


@dataclass
class StudyReport:
    scenario: str
    config: dict
    rows: list[dict]
    intercept: dict
    reps: int
    failures: dict

    def table(self) -> list[dict]:
        """Flat rows ``scenario, estimator, metric, target, value, reps, failures``."""
        return [
            {
                "scenario": self.scenario,
                "estimator": r["estimator"],
                "metric": r["metric"],
                "target": r["target"],
                "value": r["value"],
                "reps": self.reps - self.failures.get(r["estimator"], 0),
                "failures": self.failures.get(r["estimator"], 0),
            }
            for r in self.rows
        ]

    def value(self, estimator: str, metric: str, target: str) -> float:
        for r in self.rows:
            if (r["estimator"], r["metric"], r["target"]) == (estimator, metric, target):
                return r["value"]
        raise KeyError((estimator, metric, target))

    def to_dict(self) -> dict:
        return asdict(self)


def _fit_rep(args):
    cfg, rep, methods, rho_cfg, n_sub = args
    truth = make_truth(cfg)
    sample = generate_sample(cfg, truth, rep)
    out = {}
    for method in methods:
        fit_seed = np.random.SeedSequence(cfg.seed, spawn_key=(rep, STREAM_FIT))
        try:
            res = fit_arrays(
                truth.grid,
                sample.values,
                sample.y,
                method=method,
                cfg=rho_cfg,
                n_sub=n_sub,
                seed=np.random.default_rng(fit_seed),
            )
        except (RobFQRError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("replication %d, %s failed: %s", rep, method, exc)
            out[method] = None
            continue
        out[method] = (res.beta.values, res.upsilon.values, res.alpha, res.p)
    return out


def run_study(
    cfg: ScenarioConfig,
    methods: Iterable[str] = ("ls", "mm"),
    rho_cfg: RhoConfig | None = None,
    n_sub: int = 500,
    n_jobs: int = 1,
    trim_fraction: float = 0.05,
) -> StudyReport:
    """Replicate generate + fit ``cfg.n_reps`` times and aggregate the errors.

    Failed fits are excluded and counted; more than 2% failures for any
    method aborts the study.  Replications are independent, so ``n_jobs > 1``
    farms them out to worker processes; aggregation always runs in
    replication order.
    """
    methods = tuple(methods)
    truth = make_truth(cfg)
    tasks = [(cfg, rep, methods, rho_cfg, n_sub) for rep in range(cfg.n_reps)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_fit_rep, tasks))
    else:
        results = [_fit_rep(t) for t in tasks]

    rows, intercept, failures = [], {}, {}
    for method in methods:
        ok = [r[method] for r in results if r[method] is not None]
        failures[method] = cfg.n_reps - len(ok)
        if failures[method] > FAILURE_LIMIT * cfg.n_reps:
            raise RobFQRError(
                f"{method}: {failures[method]} of {cfg.n_reps} replications failed"
            )
        betas = np.vstack([o[0] for o in ok])
        ups = np.stack([o[1] for o in ok])
        alphas = np.array([o[2] for o in ok])
        ps = np.array([o[3] for o in ok])
        q = trim_count(cfg.grid_size, trim_fraction)
        for target, est, tv in (
            ("beta", betas, truth.beta0.values),
            ("upsilon", ups, truth.upsilon0.values),
        ):
            for metric, value in _metric_values(est, tv, q).items():
                rows.append({"estimator": method, "metric": metric, "target": target, "value": value})
        intercept[method] = {
            "abs_mean": float(abs(np.mean(alphas - truth.alpha0))),
            "sd": float(np.std(alphas, ddof=1)) if alphas.size > 1 else 0.0,
            "p_mean": float(ps.mean()),
        }
    config = asdict(cfg)
    config["contamination"] = str(cfg.contamination)
    return StudyReport(cfg.label(), config, rows, intercept, cfg.n_reps, failures)
