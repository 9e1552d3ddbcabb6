import numpy as np
import pytest

from oracles import kernel_double_sum, model2_phi, vech_pairs_loop, vech_products_loop
from robfqr.errors import SingularDesignError
from robfqr.fpca import build_basis_array
from robfqr.funcspace import Curve, quadratic_form
from robfqr.regression import (
    CoefVector,
    assemble,
    build_design,
    center_scores,
    fit,
    fit_arrays,
    from_centered,
    ls_fit,
    mm_fit,
    mm_loss,
    predict,
    predict_array,
    s_estimate,
    to_centered,
    u_from_v,
    vech,
    vech_pairs,
)
from robfqr.rho import C0, C1, RhoConfig, rho
from robfqr.simulation import Contamination, ScenarioConfig, generate_sample, make_truth
from robfqr.funcspace import curves


def random_basis(grid, rng, m=4, shift=1.0):
    values = rng.standard_normal((60, len(grid))).cumsum(axis=1) / 5 + shift * np.cos(grid.points)
    return build_basis_array(grid, values, "classical", m=m)


def model2(upsilon="quadratic", contamination="C0", n=300):
    cfg = ScenarioConfig("model2", upsilon, Contamination.parse(contamination), n=n)
    return cfg, make_truth(cfg)


def aligned(fit_result, grid):
    """Signs s_j with s_j * phi_hat_j close to the true Model-2 phi_j."""
    phi = np.vstack(model2_phi(grid.points))
    return np.sign((fit_result.basis.phi[:2] * grid.weights) @ phi.T).diagonal()


# -- design and coefficient coding -------------------------------------------


@pytest.mark.parametrize(
    "x,z",
    [([3.0], [9.0]), ([1.0, 2.0], [1.0, 2.0, 4.0]), ([1.0, 2.0, 3.0], [1, 2, 3, 4, 6, 9])],
)
def test_design_examples(x, z):
    d = build_design(np.array([x]))
    np.testing.assert_array_equal(d.z[0], z)
    assert d.q == len(x) * (len(x) + 1) // 2


def test_vech_matches_loop_oracle(rng):
    for p in range(1, 5):
        assert vech_pairs(p) == vech_pairs_loop(p)
        x = rng.standard_normal((7, p))
        d = build_design(x)
        for i in range(7):
            np.testing.assert_array_equal(d.z[i], vech_products_loop(list(x[i])))
        m = rng.standard_normal((p, p))
        np.testing.assert_array_equal(vech(m), [m[r, c] for r, c in vech_pairs_loop(p)])


def test_coef_vector_roundtrip():
    c = CoefVector(1.0, [2.0, 3.0], [4.0, 5.0, 6.0])
    np.testing.assert_array_equal(CoefVector.from_array(c.as_array(), 2).as_array(), c.as_array())
    np.testing.assert_array_equal(c.v, [[4.0, 2.5], [2.5, 6.0]])
    np.testing.assert_array_equal(u_from_v(c.v), c.u)
    with pytest.raises(ValueError):
        CoefVector(0.0, [1.0, 2.0], [1.0])


# -- assembly and centering --------------------------------------------------


def test_assemble_p1(grid, rng):
    basis = random_basis(grid, rng)
    beta, ups = assemble(CoefVector(0.0, [2.0], [3.0]), basis, 1)
    phi1 = basis.phi[0]
    np.testing.assert_allclose(beta.values, 2 * phi1, atol=1e-14)
    np.testing.assert_allclose(ups.values, 3 * np.outer(phi1, phi1), atol=1e-13)


@pytest.mark.parametrize("p", [2, 3])
def test_assemble_roundtrip_oracle(grid, rng, p):
    basis = random_basis(grid, rng)
    a = rng.standard_normal((p, p))
    v = a + a.T
    _, ups = assemble(CoefVector(0.0, np.zeros(p), u_from_v(v)), basis, p)
    assert ups.symmetric
    oracle = kernel_double_sum(v.tolist(), basis.phi[:p])
    assert np.max(np.abs(ups.values - oracle)) <= 1e-12 * max(1.0, np.max(np.abs(oracle)))


def test_quadratic_form_matches_coordinates(grid, rng):
    basis = random_basis(grid, rng)
    p = 3
    coef = CoefVector(0.0, np.zeros(p), rng.standard_normal(6))
    _, ups = assemble(coef, basis, p)
    for _ in range(10):
        x = rng.standard_normal(p)
        curve = Curve(grid, x @ basis.phi[:p])
        z = build_design(x[None]).z[0]
        assert quadratic_form(ups, curve) == pytest.approx(coef.u @ z, abs=5e-3)


def test_to_centered_examples(grid, rng):
    basis = random_basis(grid, rng)
    mu = center_scores(basis, 1)[0]
    c = CoefVector(1.0, [1.0], [2.0])
    star = to_centered(c, basis, 1)
    assert star.a == pytest.approx(1 + mu + 2 * mu**2, rel=1e-14)
    assert star.b[0] == pytest.approx(1 + 4 * mu, rel=1e-14)
    # with mu_1 = 3 the mapping gives the worked numbers 22 and 13
    v = c.v
    a_star = c.a + c.b @ [3.0] + np.array([3.0]) @ v @ [3.0]
    b_star = c.b + 2 * v @ [3.0]
    assert (a_star, b_star[0]) == (22.0, 13.0)
    back = from_centered(star, basis, 1)
    assert back.a == pytest.approx(c.a, abs=1e-12) and back.b[0] == pytest.approx(1.0, abs=1e-12)


def test_to_centered_identity_when_center_is_orthogonal(grid, rng):
    values = rng.standard_normal((40, 100))
    values -= values.mean(axis=0)
    basis = build_basis_array(grid, values, "classical", m=3)
    c = CoefVector(0.7, rng.standard_normal(3), rng.standard_normal(6))
    star = to_centered(c, basis)
    assert star.a == pytest.approx(c.a, abs=1e-12)
    np.testing.assert_allclose(star.b, c.b, atol=1e-12)


def test_centered_uncentered_residuals(grid, rng):
    for _ in range(50):
        p = int(rng.integers(1, 5))
        basis = random_basis(grid, rng, m=p, shift=rng.uniform(-3, 3))
        values = basis.center.values + rng.standard_normal((20, p)) @ basis.phi * 2
        y = rng.standard_normal(20)
        xi = ((values - basis.center.values) * grid.weights) @ basis.phi.T
        x = (values * grid.weights) @ basis.phi.T
        coef = CoefVector(rng.normal(), rng.standard_normal(p), rng.standard_normal(p * (p + 1) // 2))
        r_raw = build_design(x, centered=False).residuals(y, coef)
        r_star = build_design(xi).residuals(y, to_centered(coef, basis))
        assert np.max(np.abs(r_raw - r_star)) < 1e-10


# -- least squares, S and MM -------------------------------------------------


def test_ls_fit_examples(rng):
    x = rng.standard_normal((40, 2))
    d = build_design(x)
    truth = CoefVector(0.5, [1.0, -2.0], [0.3, 0.0, 1.5])
    coef, sigma = ls_fit(d, d.matrix @ truth.as_array())
    np.testing.assert_allclose(coef.as_array(), truth.as_array(), atol=1e-10)
    assert sigma < 1e-10
    coef, sigma = ls_fit(d, np.full(40, 2.0))
    np.testing.assert_allclose(coef.as_array(), [2, 0, 0, 0, 0, 0], atol=1e-12)
    with pytest.raises(SingularDesignError):
        ls_fit(build_design(np.ones((10, 1))), rng.standard_normal(10))


def test_ls_model2_linear_large_n(grid):
    cfg, truth = model2("linear", n=2000)
    s = generate_sample(cfg, truth, 0)
    res = fit_arrays(grid, s.values, s.y, method="ls", p=2)
    b = res.coef.b * aligned(res, grid)
    np.testing.assert_allclose(b, [2.0, 0.5], atol=0.05)


def test_s_estimate_exact_fit(rng):
    x = rng.standard_normal((60, 2))
    d = build_design(x)
    truth = CoefVector(-1.0, [2.0, 0.5], [1.0, -0.5, 0.25])
    y = d.matrix @ truth.as_array()
    coef, sigma = s_estimate(d, y, seed=1)
    assert sigma == 0.0
    np.testing.assert_allclose(coef.as_array(), truth.as_array(), atol=1e-6)
    # an exactly interpolating start is returned unchanged by the M-step
    assert mm_fit(d, y, 1.0, truth) is truth


def test_s_estimate_scale_equivariance(rng):
    x = rng.standard_normal((80, 2))
    d = build_design(x)
    y = d.matrix @ [1, 2, 0.5, 1, 0.5, 1] + rng.standard_t(2, 80)
    c1, s1 = s_estimate(d, y, seed=3)
    c5, s5 = s_estimate(d, 5 * y, seed=3)
    assert s5 == pytest.approx(5 * s1, rel=1e-7)
    np.testing.assert_allclose(c5.as_array(), 5 * c1.as_array(), rtol=1e-6, atol=1e-9)


def test_s_estimate_deterministic(rng):
    d = build_design(rng.standard_normal((50, 2)))
    y = rng.standard_normal(50)
    a, sa = s_estimate(d, y, seed=11)
    b, sb = s_estimate(d, y, seed=11)
    assert sa == sb and np.array_equal(a.as_array(), b.as_array())


def test_s_estimate_errors(rng):
    d = build_design(rng.standard_normal((5, 2)))
    with pytest.raises(SingularDesignError):
        s_estimate(d, rng.standard_normal(5))
    with pytest.raises(ValueError):
        s_estimate(build_design(rng.standard_normal((30, 1))), rng.standard_normal(30), n_sub=0)


def test_s_scale_model2_clean(grid):
    cfg, truth = model2()
    sig = []
    for rep in range(50):
        s = generate_sample(cfg, truth, rep)
        basis = build_basis_array(grid, s.values, "spherical")
        xi = ((s.values - basis.center.values) * grid.weights) @ basis.phi[:2].T
        sig.append(s_estimate(build_design(xi), s.y, seed=rep)[1])
    assert 0.4 <= np.median(sig) <= 0.6


def test_mm_fit_properties(grid):
    cfg, truth = model2("quadratic", "C1:mu=12")
    s = generate_sample(cfg, truth, 3)
    res = fit_arrays(grid, s.values, s.y, method="mm", p=2, seed=3)
    d = build_design(res.scores)
    init_r = d.residuals(s.y, res.init_coef)
    dof = d.p + d.q
    # the S scale solves its own defining equation at the S residuals
    assert np.sum(rho(init_r / res.sigma, C0)) / (d.n - dof) == pytest.approx(0.5, abs=1e-8)
    assert mm_loss(d, s.y, res.coef, res.sigma, C1) <= mm_loss(d, s.y, res.init_coef, res.sigma, C1)
    with pytest.raises(ValueError):
        mm_fit(d, s.y, 0.0, res.init_coef)


def test_mm_model2_large_n(grid):
    cfg, truth = model2(n=2000)
    s = generate_sample(cfg, truth, 1)
    res = fit_arrays(grid, s.values, s.y, method="mm", p=2, seed=1)
    sg = aligned(res, grid)
    # slope coordinates of the raw-curve model; the centered ones also carry
    # 2 V mu_hat, which is sampling noise of order 0.1 here
    raw = from_centered(res.coef, res.basis)
    np.testing.assert_allclose(raw.b * sg, [1.0, 1.0], atol=0.05)
    u = res.coef.u * np.array([sg[0] ** 2, sg[0] * sg[1], sg[1] ** 2])
    # V = [[1, 1/2], [1/2, 1]] codes to u = (1, 1, 1)
    np.testing.assert_allclose(u, [1.0, 1.0, 1.0], atol=0.1)


def test_mm_resists_vertical_outliers_model1(grid):
    cfg = ScenarioConfig("model1", "U00", Contamination.parse("C1:mu=12"))
    truth = make_truth(cfg)
    ratios = []
    for rep in range(50):
        s = generate_sample(cfg, truth, rep)
        err = {}
        for method in ("ls", "mm"):
            res = fit_arrays(grid, s.values, s.y, method=method, seed=rep)
            err[method] = np.sum(grid.weights * (res.beta.values - truth.beta0.values) ** 2)
        ratios.append(err["mm"] / err["ls"])
    assert np.median(ratios) <= 0.2


def test_robustness_to_gross_response_errors(grid):
    cfg, truth = model2()
    moves = {"ls": [], "mm": []}
    for rep in range(20):
        s = generate_sample(cfg, truth, rep)
        bad = s.y.copy()
        bad[: len(bad) // 10] += 1e6
        for method in moves:
            a = fit_arrays(grid, s.values, s.y, method=method, p=2, seed=rep)
            b = fit_arrays(grid, s.values, bad, method=method, p=2, seed=rep)
            moves[method].append(np.sqrt(np.sum(grid.weights * (a.beta.values - b.beta.values) ** 2)))
    assert np.median(moves["mm"]) < 0.2
    assert np.median(moves["ls"]) > 10


# -- end to end ----------------------------------------------------------------


def test_noiseless_recovery(grid):
    cfg, truth = model2()
    s = generate_sample(cfg, truth, 0, sigma0=0.0)
    res = fit(curves(grid, s.values), s.y, method="mm", p=2, seed=0)
    assert np.max(np.abs(res.beta.values - truth.beta0.values)) < 0.05
    assert np.max(np.abs(res.upsilon.values - truth.upsilon0.values)) < 0.05


@pytest.mark.parametrize("method", ["ls", "mm"])
def test_permutation_invariance(grid, method):
    cfg, truth = model2()
    s = generate_sample(cfg, truth, 2)
    perm = np.random.default_rng(0).permutation(len(s.y))
    a = fit_arrays(grid, s.values, s.y, method=method, p=2, seed=4)
    b = fit_arrays(grid, s.values[perm], s.y[perm], method=method, p=2, seed=4)
    np.testing.assert_array_equal(a.beta.values, b.beta.values)
    np.testing.assert_array_equal(a.upsilon.values, b.upsilon.values)
    np.testing.assert_array_equal(a.residuals[perm], b.residuals)


@pytest.mark.parametrize("method", ["ls", "mm"])
def test_predict_identities(grid, method):
    cfg, truth = model2()
    s = generate_sample(cfg, truth, 5)
    res = fit_arrays(grid, s.values, s.y, method=method, seed=5)
    preds = np.array([predict(res, c) for c in curves(grid, s.values)])
    assert np.max(np.abs(s.y - preds - res.residuals)) < 1e-8
    np.testing.assert_allclose(predict_array(res, s.values), preds, atol=1e-10)
    assert predict(res, res.basis.center) == pytest.approx(res.alpha_star, abs=1e-12)
    # the uncentered coefficients give the same regression function
    raw = res.alpha + (s.values * grid.weights) @ res.beta.values + np.einsum(
        "im,ml,il->i", s.values * grid.weights, res.upsilon.values, s.values * grid.weights
    )
    np.testing.assert_allclose(raw, preds, atol=1e-8)
    assert res.upsilon.symmetric


def test_predict_zero_coefficients(grid, rng):
    basis = random_basis(grid, rng)
    coef = CoefVector(2.5, [0.0], [0.0])
    assert from_centered(coef, basis, 1).a == 2.5
    x = rng.standard_normal(100)
    _, ups = assemble(coef, basis, 1)
    assert quadratic_form(ups, Curve(grid, x)) == 0.0


def test_fit_rejects_bad_inputs(grid, rng):
    values = rng.standard_normal((10, 100))
    with pytest.raises(ValueError):
        fit_arrays(grid, values, np.zeros(9))
    with pytest.raises(ValueError):
        fit_arrays(grid, values, np.zeros(10), method="lad")
    with pytest.raises(ValueError):
        fit_arrays(grid, values, rng.standard_normal(10), p=5)


def test_custom_tuning_is_used(grid):
    cfg, truth = model2()
    s = generate_sample(cfg, truth, 1)
    a = fit_arrays(grid, s.values, s.y, p=2, seed=1)
    b = fit_arrays(grid, s.values, s.y, p=2, seed=1, cfg=RhoConfig(c1=5.0))
    assert a.sigma == b.sigma
    assert not np.array_equal(a.coef.as_array(), b.coef.as_array())
