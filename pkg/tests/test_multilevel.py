import json

import numpy as np
import pytest

from hiermodel.moments import DataError, DataTable
from hiermodel.multilevel import (
    SimulationConfig,
    TwoLevelModel,
    TwoLevelPattern,
    c_scale,
    components_from_moments,
    decompose_arrays,
    decompose_two_level,
    fit_random_intercept,
    fit_two_level_sem,
    generate_clustered,
    implied_two_level,
    mc_mean,
    simulate,
    summarize,
    two_level_discrepancy,
)
from hiermodel.optimize import numeric_gradient


def _table(values, clusters, name="y"):
    v = np.asarray(values, dtype=float).reshape(len(values), -1)
    names = (name,) if v.shape[1] == 1 else tuple(f"{name}{i}" for i in range(v.shape[1]))
    return DataTable(names, v, cluster_column="school", cluster_labels=np.array(clusters))


def test_decompose_hand_example():
    t = _table([0, 2, 4, 6], ["a", "a", "b", "b"])
    m = decompose_two_level(t, ["y"])
    assert m.s_pw[0, 0] == pytest.approx(2.0)
    assert m.s_b[0, 0] == pytest.approx(16.0)
    assert m.c_scale == pytest.approx(2.0)
    assert (m.n_total, m.j_clusters) == (4, 2)


def test_identical_cluster_means_give_zero_between():
    t = _table([[1, 5], [3, 7], [0, 4], [4, 8]], ["a", "a", "b", "b"])
    m = decompose_two_level(t, ["y0", "y1"])
    np.testing.assert_allclose(m.s_b, 0.0, atol=1e-12)
    vc = components_from_moments(m)
    assert vc.sigma2_between == 0.0 and vc.icc == 0.0 and vc.truncated


def test_decompose_preconditions():
    with pytest.raises(DataError, match="at least 2 clusters"):
        decompose_two_level(_table([1, 2, 3], ["a", "a", "a"]), ["y"])
    with pytest.raises(DataError, match="singleton"):
        decompose_two_level(_table([1, 2, 3], ["a", "b", "c"]), ["y"])
    with pytest.raises(DataError, match="cluster column"):
        decompose_two_level(DataTable(("y",), np.ones((3, 1))), ["y"])


def test_c_scale():
    assert c_scale([20] * 50) == pytest.approx(20.0)
    sizes = [3, 7, 12, 1]
    n = sum(sizes)
    assert c_scale(sizes) == pytest.approx((n * n - sum(s * s for s in sizes)) / (n * 3))
    assert 0 < c_scale(sizes) <= max(sizes)


def test_random_intercept_by_formula():
    # two clusters, s_pw = 2, s_b = 16, c = 2 -> sigma2_B = 7
    vc = fit_random_intercept(_table([0, 2, 4, 6], ["a", "a", "b", "b"]), "y")
    assert vc.sigma2_within == pytest.approx(2.0)
    assert vc.sigma2_between == pytest.approx(7.0)
    assert vc.icc == pytest.approx(7 / 9)
    assert vc.gamma00 == pytest.approx(3.0)


def test_icc_half_when_components_equal():
    # cluster means 1 and 1 + sqrt(6): s_pw = 2, s_b = 6, c = 2
    d = np.sqrt(6.0)
    t = _table([0, 2, d, d + 2], ["a", "a", "b", "b"])
    m = decompose_two_level(t, ["y"])
    vc = components_from_moments(m)
    assert vc.sigma2_within == pytest.approx(vc.sigma2_between)
    assert vc.icc == pytest.approx(0.5)


def test_implied_two_level_examples():
    sw, sb, mu = implied_two_level(TwoLevelModel(np.zeros((2, 1)), [[1.0]], np.diag([1.0, 2.0]), np.diag([3.0, 4.0]), alpha_b=[5.0, 6.0]))
    np.testing.assert_array_equal(sw, np.diag([1.0, 2.0]))
    np.testing.assert_array_equal(sb, np.diag([3.0, 4.0]))
    np.testing.assert_array_equal(mu, [5.0, 6.0])
    sw, sb, mu = implied_two_level(TwoLevelModel(np.ones((2, 1)), [[1.0]], np.eye(2), np.eye(2)))
    np.testing.assert_array_equal(sw, [[2, 1], [1, 2]])
    np.testing.assert_array_equal(sb, [[2, 1], [1, 2]])
    _, _, mu = implied_two_level(TwoLevelModel(np.ones((2, 1)), [[1.0]], np.eye(2), np.eye(2), alpha_b=[1.0, 2.0], nu_b=[0.0]))
    np.testing.assert_array_equal(mu, [1.0, 2.0])


def test_mean_structure_and_symmetry():
    lam = np.array([[1.0], [0.5], [2.0]])
    m = TwoLevelModel(lam, [[2.0]], 0.3 * np.eye(3), 0.3 * np.eye(3), alpha_b=[1, 1, 1], nu_b=[2.0])
    sw, sb, mu = implied_two_level(m)
    np.testing.assert_array_equal(sw, sb)
    np.testing.assert_allclose(mu, 1 + 2 * lam.ravel())
    with pytest.raises(DataError):
        TwoLevelModel(lam, [[1.0]], np.eye(2), np.eye(3))


def _pattern_and_moments(seed=3, j=200, n=10):
    lam = np.array([[1.0], [0.8], [1.2]])
    sw, sb, mu = implied_two_level(TwoLevelModel(lam, [[1.0]], 0.5 * np.eye(3), 0.1 * np.eye(3)))
    tab = generate_clustered({"mu": mu, "sigma_b": sb, "sigma_w": sw}, j, n, seed)
    return TwoLevelPattern.one_factor(3), decompose_two_level(tab, list(tab.column_names))


def test_two_level_gradient():
    pat, mom = _pattern_and_moments()
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = np.concatenate([rng.uniform(0.6, 1.4, 2), rng.uniform(0.6, 1.5, 1), rng.uniform(0.3, 0.8, 3), rng.uniform(0.05, 0.3, 3)])
        _, g, _, _ = two_level_discrepancy(pat, x, mom)
        num = numeric_gradient(lambda v: two_level_discrepancy(pat, v, mom)[0], x)
        np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-9)


def test_two_level_single_dataset_fit():
    pat, mom = _pattern_and_moments()
    r = fit_two_level_sem(mom, pat)
    est = r.estimates.as_dict()
    # the within-level part is pinned down well by 2000 observations
    assert est["lambda[1,0]"] == pytest.approx(0.8, rel=0.1)
    assert est["lambda[2,0]"] == pytest.approx(1.2, rel=0.1)
    for k in range(3):
        assert est[f"theta_w[{k}]"] == pytest.approx(0.5, rel=0.1)
    assert r.df == 12 - 9
    assert r.standard_errors is not None
    json.dumps(r.to_dict())


def test_two_level_saturated():
    # one variable: Sigma_W = psi, Sigma_B = psi + theta_b, two moments, two parameters
    pat = TwoLevelPattern([[1.0]], [[False]], [[1.0]], [[True]], [0.0], [False], [0.5], [True])
    tab = generate_clustered({"mu": [0.0], "sigma_b": [[3.0]], "sigma_w": [[2.0]]}, 40, 5, 9)
    r = fit_two_level_sem(decompose_two_level(tab, ["y"]), pat)
    assert r.df == 0
    assert r.discrepancy == pytest.approx(0.0, abs=1e-10)


def test_zero_between_structure_estimates_zero():
    lam = np.array([[1.0], [0.8], [1.2]])
    sw = lam @ lam.T + 0.5 * np.eye(3)
    cfg = SimulationConfig(np.zeros(3), np.zeros((3, 3)), sw, 60, 8, seed=4, replications=60)
    _, data = simulate(cfg, keep_data=True)
    pat = TwoLevelPattern.one_factor(3, separate_psi_b=True)
    pat = TwoLevelPattern(pat.loadings, pat.loadings_free, pat.psi, pat.psi_free, pat.theta_w, pat.theta_w_free,
                          np.zeros(3), np.ones(3, bool), separate_psi_b=True, psi_b=np.zeros((1, 1)))
    est = []
    for y, codes in data:
        est.append(fit_two_level_sem(decompose_arrays(y, codes), pat, standard_errors=False).estimates.values)
    est = np.array(est)
    mean, se = mc_mean(est)
    names = pat.param_names()
    for k, name in enumerate(names):
        if name.startswith("theta_b") or name.startswith("psi_b"):
            assert abs(mean[k]) < 3 * se[k] + 1e-3, name


def test_generator_determinism_and_shape():
    p = {"mu": [1.0, 2.0], "sigma_b": np.eye(2), "sigma_w": 2 * np.eye(2)}
    a = generate_clustered(p, 5, 4, seed=11)
    b = generate_clustered(p, 5, 4, seed=11)
    np.testing.assert_array_equal(a.data, b.data)
    assert a.n_rows == 20 and len(set(a.cluster_labels)) == 5
    c = generate_clustered(p, 3, [1, 2, 5], seed=1)
    assert c.n_rows == 8


def test_generator_rejects_bad_input():
    with pytest.raises(DataError, match="semidefinite"):
        generate_clustered({"mu": [0, 0], "sigma_b": [[1, 2], [2, 1]], "sigma_w": np.eye(2)}, 3, 3, 0)
    with pytest.raises(DataError, match="positive definite"):
        generate_clustered({"mu": [0, 0], "sigma_b": np.eye(2), "sigma_w": np.zeros((2, 2))}, 3, 3, 0)
    with pytest.raises(DataError, match="clusters"):
        SimulationConfig([0.0], [[1.0]], [[1.0]], 0, 5)


def test_zero_between_variance_generator():
    t = generate_clustered({"mu": [0.0], "sigma_b": [[0.0]], "sigma_w": [[4.0]]}, 200, 10, 5)
    m = decompose_two_level(t, ["y"])
    # E[s_b] = Sigma_W when Sigma_B = 0
    assert m.s_b[0, 0] == pytest.approx(m.s_pw[0, 0], rel=0.25)
    assert components_from_moments(m).icc < 0.05


def test_grand_variance_monte_carlo():
    cfg = SimulationConfig([0.0], [[25.0]], [[75.0]], 100, 20, seed=2, replications=200)
    _, data = simulate(cfg, keep_data=True)
    v = np.array([np.var(y[:, 0], ddof=1) for y, _ in data])
    mean, se = mc_mean(v)
    # finite-J expectation of the total variance is slightly below 100
    assert abs(mean - 100.0) < 3 * se + 0.3


def test_pooled_within_unbiased():
    cfg = SimulationConfig([0.0], [[25.0]], [[75.0]], 100, 20, seed=8, replications=500)
    stats, _ = simulate(cfg)
    mean, se = mc_mean(stats.s_pw[:, 0, 0])
    assert abs(mean - 75.0) < 3 * se
    mb, sb = mc_mean(stats.sigma2_between[:, 0])
    assert abs(mb - 25.0) < 3 * sb + 0.05


def test_threads_do_not_change_results():
    cfg = SimulationConfig([0.0, 1.0], [[2.0, 0.5], [0.5, 1.0]], np.eye(2), 30, 6, seed=99, replications=24)
    s1, _ = simulate(cfg, workers=1)
    s4, _ = simulate(cfg, workers=4)
    np.testing.assert_array_equal(s1.icc, s4.icc)
    np.testing.assert_array_equal(s1.s_b, s4.s_b)
    assert summarize(s1) == summarize(s4)


def test_config_json():
    cfg = SimulationConfig.from_json(json.dumps({"mu": [0], "sigma_b": [[25]], "sigma_w": [[75]], "clusters": 10, "cluster_size": 5, "seed": 3, "replications": 2}))
    assert cfg.replications == 2 and cfg.cluster_size == 5
    with pytest.raises(DataError, match="missing"):
        SimulationConfig.from_json(json.dumps({"mu": [0]}))


def test_mc_mean_compensated():
    vals = np.array([1e16, 1.0, -1e16, 1.0])
    mean, _ = mc_mean(vals)
    assert mean == pytest.approx(0.5)
