import json

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from hiermodel import fixture
from hiermodel.moments import PooledMoments
from hiermodel.optimize import bfgs, numeric_gradient
from hiermodel.sem import (
    ModelError,
    NotPositiveDefiniteError,
    PathModel,
    fit_ml,
    fml,
    fml_gradient,
    implied_covariance,
    sem_summary,
    standardize,
)

V = fixture.VARIABLES


@pytest.fixture(scope="module")
def mimic():
    return PathModel.mimic(["female"], V, anchor="math", latent="achievement")


@pytest.fixture(scope="module")
def fixture_fit(mimic, mimic_sample):
    return fit_ml(mimic, mimic_sample)


def _moments(cov, n, names):
    cov = np.asarray(cov, dtype=float)
    return PooledMoments(tuple(names), n, np.zeros(len(names)), cov * (n - 1))


# implied covariance --------------------------------------------------------


def test_zero_loadings_give_diagonal():
    m = PathModel.mimic(["x"], ["a", "b", "c"])
    m = PathModel(m.exogenous, m.indicators, m.latents, np.zeros((3, 1)), np.zeros((3, 1), bool),
                  m.gamma, m.gamma_free, m.psi, m.psi_free, m.theta, m.theta_free)
    sig = implied_covariance(m, [0.7, 2.0, 1.0, 2.0, 3.0], [[4.0]])
    np.testing.assert_allclose(sig, np.diag([4.0, 1.0, 2.0, 3.0]))


def test_unit_loadings_hand_computed():
    m = PathModel.mimic(["x"], ["a", "b", "c"])
    # free: loadings b, c; gamma; psi; theta a, b, c
    sig = implied_covariance(m, [1.0, 1.0, 0.0, 1.0, 1e-300, 1e-300, 1e-300], [[1.0]])
    np.testing.assert_allclose(sig[1:, 1:], np.ones((3, 3)))
    np.testing.assert_allclose(sig[0, 1:], 0.0)


def test_implied_formula(mimic):
    lam_r, lam_l, g, psi, t1, t2, t3 = 0.6, 0.7, -40.0, 900.0, 300.0, 10.0, 200.0
    vx = 0.25
    sig = implied_covariance(mimic, [lam_r, lam_l, g, psi, t1, t2, t3], [[vx]])
    lam = np.array([lam_r, 1.0, lam_l])
    veta = g * g * vx + psi
    np.testing.assert_allclose(sig[0, 1:], lam * g * vx)
    np.testing.assert_allclose(sig[1:, 1:], np.outer(lam, lam) * veta + np.diag([t1, t2, t3]))


def test_parameter_count_mismatch(mimic):
    with pytest.raises(ModelError):
        implied_covariance(mimic, [1.0, 2.0], [[1.0]])


# discrepancy ---------------------------------------------------------------


def test_fml_identity_and_closed_form(rng):
    a = rng.normal(size=(4, 4))
    s = a @ a.T + np.eye(4)
    assert fml(s, s) == pytest.approx(0.0, abs=1e-12)
    assert fml([[2.0]], [[1.0]]) == pytest.approx(1 - np.log(2), abs=1e-14)


def test_fml_rejects_non_pd():
    with pytest.raises(NotPositiveDefiniteError, match="pivot"):
        fml(np.eye(2), [[1.0, 2.0], [2.0, 1.0]])


def test_fml_matches_loglikelihood_oracle(rng):
    # -2/N (l(Sigma) - l(S)) with S the ML (divisor N) covariance of centred data
    n = 5000
    a = rng.normal(size=(3, 3))
    true = a @ a.T + np.eye(3)
    y = rng.multivariate_normal(np.zeros(3), true, size=n)
    y -= y.mean(axis=0)
    s = y.T @ y / n
    b = rng.normal(size=(3, 3))
    sigma = b @ b.T + 0.5 * np.eye(3)
    ll = lambda c: multivariate_normal(np.zeros(3), c).logpdf(y).sum()  # noqa: E731
    oracle = -2.0 / n * (ll(sigma) - ll(s))
    assert fml(s, sigma) == pytest.approx(oracle, rel=1e-9)


def test_gradient_matches_finite_differences(mimic, mimic_sample, rng):
    s = mimic_sample.covariance
    phi = s[:1, :1]
    for _ in range(20):
        x = np.array([rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5), rng.uniform(-60, 10),
                      rng.uniform(200, 1500), rng.uniform(50, 500), rng.uniform(5, 400), rng.uniform(50, 500)])
        analytic = fml_gradient(mimic, x, s, phi)
        numeric = numeric_gradient(lambda v: fml(s, implied_covariance(mimic, v, phi)), x, h=1e-6)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-9)


# optimiser -----------------------------------------------------------------


def test_bfgs_rosenbrock():
    f = lambda z: (1 - z[0]) ** 2 + 100 * (z[1] - z[0] ** 2) ** 2  # noqa: E731
    res = bfgs(f, [-1.2, 1.0], gtol=1e-8, ftol=1e-14, maxiter=2000)
    assert res.converged
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-5)


def test_bfgs_quadratic_numeric_gradient():
    a = np.array([[3.0, 1.0], [1.0, 2.0]])
    res = bfgs(lambda z: 0.5 * z @ a @ z - z.sum(), np.zeros(2))
    np.testing.assert_allclose(res.x, np.linalg.solve(a, np.ones(2)), atol=1e-6)


# fitting -------------------------------------------------------------------


def test_fixture_fit_matches_figure(fixture_fit):
    s = sem_summary(fixture_fit)
    assert s["gamma"][0] == pytest.approx(-42.73, abs=0.5)
    assert s["gamma_std"][0] == pytest.approx(-0.57, abs=0.01)
    assert s["residual_std"] == pytest.approx(0.67, abs=0.01)
    assert s["r2_latent"] == pytest.approx(0.33, abs=0.01)
    assert s["min_loading_std"] == pytest.approx(0.79, abs=0.02)
    assert s["loadings"][1] == 1.0
    assert fixture_fit.df == 2
    assert fixture_fit.chi_square == pytest.approx(13 * fixture_fit.fml)


def test_fixture_fit_is_stationary(fixture_fit, mimic):
    s = fixture_fit.sample_covariance
    g = fml_gradient(mimic, fixture_fit.estimates.values, s, s[:1, :1])
    assert np.max(np.abs(g * np.maximum(1, np.abs(fixture_fit.estimates.values)))) < 1e-5


def test_standard_errors_present(fixture_fit):
    se = fixture_fit.standard_errors
    assert se is not None and np.all(np.isfinite(se)) and np.all(se > 0)
    # gamma SE is of the same order as the regression SE (17.76)
    assert 10 < se[2] < 30


def test_gamma_std_squared_is_r2(fixture_fit):
    st = fixture_fit.standardized
    assert st.gamma_std[0, 0] ** 2 == pytest.approx(st.r2_latent[0], abs=1e-9)


def test_metric_invariance(mimic, mimic_sample, fixture_fit):
    for anchor in ("reading", "language"):
        other = fit_ml(mimic.with_anchor(anchor), mimic_sample)
        assert other.fml == pytest.approx(fixture_fit.fml, abs=1e-6)
        assert other.chi_square == pytest.approx(fixture_fit.chi_square, abs=1e-6)
        a, b = other.standardized, fixture_fit.standardized
        np.testing.assert_allclose(a.gamma_std, b.gamma_std, atol=1e-6)
        np.testing.assert_allclose(a.loadings_std, b.loadings_std, atol=1e-6)
        np.testing.assert_allclose(a.r2_latent, b.r2_latent, atol=1e-6)


def test_saturated_model_fits_exactly():
    cov = np.array([[1.0, 0.4, 0.3], [0.4, 2.0, 0.9], [0.3, 0.9, 1.5]])
    m = PathModel.mimic(["x"], ["a", "b"])
    assert m.df == 0
    r = fit_ml(m, _moments(cov, 200, ["x", "a", "b"]))
    assert r.fml == pytest.approx(0.0, abs=1e-10)
    assert r.chi_square == pytest.approx(0.0, abs=1e-8)
    np.testing.assert_allclose(r.implied_covariance, cov, atol=1e-6)


def test_recovery_at_large_n():
    rng = np.random.default_rng(7)
    n = 100_000
    lam = np.array([1.0, 0.8, 1.3])
    gamma, psi, theta = 0.6, 0.5, np.array([0.4, 0.3, 0.6])
    x = rng.normal(size=n)
    eta = gamma * x + rng.normal(0, np.sqrt(psi), n)
    y = eta[:, None] * lam + rng.normal(size=(n, 3)) * np.sqrt(theta)
    data = np.column_stack([x, y])
    dev = data - data.mean(axis=0)
    sample = PooledMoments(("x", "a", "b", "c"), n, data.mean(axis=0), dev.T @ dev)
    r = fit_ml(PathModel.mimic(["x"], ["a", "b", "c"]), sample)
    truth = np.array([0.8, 1.3, gamma, psi, *theta])
    np.testing.assert_allclose(r.estimates.values, truth, rtol=0.02)


def test_standardize_trivial_cases():
    cov = np.array([[1.0, 0.0], [0.0, 2.0]])
    m = PathModel(("x",), ("a",), ("eta",), np.ones((1, 1)), np.zeros((1, 1), bool), np.zeros((1, 1)),
                  np.ones((1, 1), bool), np.ones(1), np.ones(1, bool), np.zeros(1), np.zeros(1, bool))
    r = fit_ml(m, _moments(cov, 50, ["x", "a"]))
    assert r.estimates["eta~x"] == pytest.approx(0.0, abs=1e-6)
    st = standardize(r)
    assert st.gamma_std[0, 0] == pytest.approx(0.0, abs=1e-6)
    assert st.residual_variance_std[0] == pytest.approx(1.0, abs=1e-9)
    # single indicator, loading 1, no error variance
    assert st.loadings_std[0, 0] == pytest.approx(1.0)


def test_identification_checks():
    m = PathModel.mimic(["x"], ["a", "b", "c"])
    free_all = PathModel(m.exogenous, m.indicators, m.latents, m.loadings, np.ones((3, 1), bool),
                         m.gamma, m.gamma_free, m.psi, m.psi_free, m.theta, m.theta_free)
    with pytest.raises(ModelError, match="metric"):
        free_all.check_identified()
    small = PathModel.mimic(["x"], ["a"])
    with pytest.raises(ModelError, match="degrees of freedom"):
        small.check_identified()


def test_model_json_roundtrip(mimic):
    doc = json.loads(json.dumps(mimic.to_dict()))
    back = PathModel.from_dict(doc)
    np.testing.assert_array_equal(back.loadings_free, mimic.loadings_free)
    np.testing.assert_array_equal(back.loadings, mimic.loadings)
    assert back.observed == mimic.observed
    assert back.param_names() == mimic.param_names()


def test_model_json_defaults():
    m = PathModel.from_json(json.dumps({
        "exogenous": ["female"],
        "latents": ["ach"],
        "indicators": ["reading", "math", "language"],
        "loadings": [
            {"latent": "ach", "indicator": "math", "free": False, "value": 1.0},
            {"latent": "ach", "indicator": "reading"},
            {"latent": "ach", "indicator": "language"},
        ],
        "paths": [{"latent": "ach", "exogenous": "female"}],
    }))
    assert m.n_free == 7 and m.df == 2
    with pytest.raises(ModelError):
        PathModel.from_dict({"latents": ["a"], "indicators": ["x"], "loadings": [{"latent": "zz", "indicator": "x"}]})


def test_fit_report_json(fixture_fit):
    doc = json.loads(json.dumps(fixture_fit.to_dict()))
    assert doc["df"] == 2
    names = [p["name"] for p in doc["parameters"]]
    assert "achievement~female" in names
    assert doc["standardized"]["r2_latent"][0] == fixture_fit.standardized.r2_latent[0]
