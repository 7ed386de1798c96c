import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiermodel import fixture
from hiermodel.manova import SingularMatrixError, determinant, sscp_partition, wilks_test
from hiermodel.moments import DataError, DataTable, GroupMoments, group_moments
from hiermodel.univariate import anova_oneway, ols_two_group


def test_partition_matches_table(fx):
    part = sscp_partition(fx.groups, fixture.VARIABLES)
    assert part.within[0, 1] == pytest.approx(10214.750, abs=0.5)
    assert part.total[1, 1] == pytest.approx(19239.429, abs=0.5)
    np.testing.assert_allclose(part.total, fixture.TOTAL_SSCP, atol=0.5)


def test_one_variable_partition_is_anova(fx):
    sub = [GroupMoments(g.label, g.n, g.mean[:1], g.within_sscp[:1, :1]) for g in fx.groups]
    part = sscp_partition(sub)
    a = anova_oneway(fx.groups, 0)
    assert part.between[0, 0] == a.ss_between
    assert part.within[0, 0] == a.ss_within


def test_identical_groups_have_zero_between():
    g = [GroupMoments("a", 4, [1.0, 2.0], np.eye(2)), GroupMoments("b", 5, [1.0, 2.0], np.eye(2))]
    np.testing.assert_array_equal(sscp_partition(g).between, np.zeros((2, 2)))
    w = wilks_test(sscp_partition(g))
    assert w.lam == 1.0 and w.f_approx == 0.0 and w.p == 1.0


def test_determinant_examples(fx):
    assert determinant(np.eye(3)) == 1.0
    assert determinant([[2, 1], [1, 2]]) == pytest.approx(3.0)
    assert determinant(fixture.WITHIN_SSCP) == pytest.approx(1.00888e11, rel=1e-3)
    assert determinant(fixture.TOTAL_SSCP) == pytest.approx(2.27001e11, rel=1e-3)
    with pytest.raises(DataError):
        determinant(np.ones((2, 3)))


def test_wilks_fixture(fx):
    w = wilks_test(sscp_partition(fx.groups, fixture.VARIABLES))
    assert w.lam == pytest.approx(0.444, abs=0.001)
    assert w.f_approx == pytest.approx(4.17, abs=0.01)
    assert (w.df1, w.df2) == (3.0, 10.0)
    assert w.p == pytest.approx(0.037, abs=0.002)


def test_wilks_reading_only(fx):
    sub = [GroupMoments(g.label, g.n, g.mean[:1], g.within_sscp[:1, :1]) for g in fx.groups]
    w = wilks_test(sscp_partition(sub))
    assert w.lam == pytest.approx(10836.375 / 11137.714, abs=1e-6)
    assert w.lam == pytest.approx(0.973, abs=0.0005)
    r = ols_two_group(fx.groups, 0, reference="male")
    assert w.lam == pytest.approx(1 - r.r2, abs=1e-12)
    assert w.p == pytest.approx(anova_oneway(fx.groups, 0).p, abs=1e-8)


def test_errors():
    g = GroupMoments("a", 4, [1.0, 2.0], np.eye(2))
    with pytest.raises(DataError):
        sscp_partition([g])
    # the two outcomes are identical in every observation
    collinear = [
        GroupMoments("a", 10, [1.0, 1.0], np.ones((2, 2))),
        GroupMoments("b", 10, [2.0, 2.0], np.ones((2, 2))),
    ]
    with pytest.raises(SingularMatrixError):
        wilks_test(sscp_partition(collinear))
    small = [GroupMoments("a", 2, [1.0, 2.0], np.eye(2)), GroupMoments("b", 2, [3.0, 2.0], np.eye(2))]
    with pytest.raises(DataError, match="observations"):
        wilks_test(sscp_partition(small))


def _data(seed, p, k, n):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(n, p)) @ rng.normal(size=(p, p)) + rng.normal(size=p)
    g = np.arange(n) % k
    y[g == 1] += rng.normal(size=p)
    return y, g


def _groups(y, g):
    names = tuple(f"y{i}" for i in range(y.shape[1]))
    return group_moments(DataTable(("g",) + names, np.column_stack([g, y])), "g", names)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(2, 4))
def test_lambda_invariant_to_linear_transform(seed, p, k):
    y, g = _data(seed, p, k, 40)
    a = np.random.default_rng(seed + 1).normal(size=(p, p)) + 3 * np.eye(p)
    l0 = wilks_test(sscp_partition(_groups(y, g))).lam
    l1 = wilks_test(sscp_partition(_groups(y @ a.T + 5.0, g))).lam
    assert l1 == pytest.approx(l0, rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_one_dimensional_reduction(seed, k):
    y, g = _data(seed, 1, k, 30)
    groups = _groups(y, g)
    w = wilks_test(sscp_partition(groups))
    a = anova_oneway(groups)
    assert w.lam == pytest.approx(a.ss_within / a.ss_total, rel=1e-10)
    assert w.p == pytest.approx(a.p, abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_determinant_of_inverse(seed, n):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    a = q @ np.diag(rng.uniform(0.5, 3.0, n)) @ q.T
    assert determinant(a) * determinant(np.linalg.inv(a)) == pytest.approx(1.0, rel=1e-8)
