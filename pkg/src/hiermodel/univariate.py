"""Dummy-coded OLS and one-way ANOVA over group moments."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distributions import f_upper_tail, t_two_sided
from .moments import DataError, GroupMoments


@dataclass(frozen=True)
class RegressionResult:
    beta: float
    se: float
    t: float
    p: float
    r2: float
    intercept: float
    df_resid: int
    reference: str
    coded: str


@dataclass(frozen=True)
class AnovaResult:
    ss_between: float
    ss_within: float
    df_between: int
    df_within: int
    f: float
    p: float

    @property
    def ss_total(self) -> float:
        return self.ss_between + self.ss_within

    @property
    def r2(self) -> float:
        return self.ss_between / self.ss_total


@dataclass(frozen=True)
class MultiDummyResult:
    """k-group OLS with k - 1 dummies against a reference group."""

    intercept: float
    labels: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    r2: float
    df_resid: int


def _outcome_index(groups: Sequence[GroupMoments], outcome, variables=None) -> int:
    if isinstance(outcome, (int, np.integer)):
        return int(outcome)
    if variables is None:
        raise DataError("pass variables=... to select an outcome by name")
    try:
        return list(variables).index(outcome)
    except ValueError:
        raise DataError(f"unknown outcome {outcome!r}") from None


def _one_var(groups, k):
    n = np.array([g.n for g in groups], dtype=float)
    m = np.array([g.mean[k] for g in groups])
    ssw = float(sum(g.within_sscp[k, k] for g in groups))
    grand = n @ m / n.sum()
    ssb = float(n @ (m - grand) ** 2)
    return n, m, ssw, ssb


def ols_two_group(
    groups: Sequence[GroupMoments],
    outcome=0,
    variables=None,
    reference: str | None = None,
) -> RegressionResult:
    """Regress ``outcome`` on a 0/1 dummy for the non-reference group.

    The reference (coded 0) defaults to the first group in sorted label order.
    """
    if len(groups) != 2:
        raise DataError(f"two-group regression needs exactly two groups, got {len(groups)}")
    k = _outcome_index(groups, outcome, variables)
    g0, g1 = sorted(groups, key=lambda g: g.label)
    if reference is not None:
        if reference not in (g0.label, g1.label):
            raise DataError(f"unknown reference group {reference!r}")
        if reference == g1.label:
            g0, g1 = g1, g0
    n_total = g0.n + g1.n
    if n_total < 3:
        raise DataError("need at least three observations")
    n, m, ssw, ssb = _one_var((g0, g1), k)
    sst = ssw + ssb
    if sst <= 0:
        raise DataError("outcome has zero total variance")
    beta = float(m[1] - m[0])
    df = n_total - 2
    mse = ssw / df
    se = float(np.sqrt(mse * (1.0 / n[0] + 1.0 / n[1])))
    if se == 0:
        t = np.inf if beta != 0 else 0.0
        p = 0.0 if beta != 0 else 1.0
    else:
        t = beta / se
        p = t_two_sided(t, df)
    return RegressionResult(beta, se, t, p, ssb / sst, float(m[0]), df, g0.label, g1.label)


def anova_oneway(groups: Sequence[GroupMoments], outcome=0, variables=None) -> AnovaResult:
    if len(groups) < 2:
        raise DataError("one-way ANOVA needs at least two groups")
    k = _outcome_index(groups, outcome, variables)
    n, _, ssw, ssb = _one_var(groups, k)
    df_b = len(groups) - 1
    df_w = int(n.sum()) - len(groups)
    if df_w <= 0:
        raise DataError("no within-groups degrees of freedom")
    if ssw == 0:
        f = np.inf if ssb > 0 else 0.0
        p = 0.0 if ssb > 0 else 1.0
    else:
        f = (ssb / df_b) / (ssw / df_w)
        p = f_upper_tail(f, df_b, df_w)
    return AnovaResult(ssb, ssw, df_b, df_w, f, p)


def ols_dummies(
    groups: Sequence[GroupMoments],
    outcome=0,
    variables=None,
    reference: str | None = None,
) -> MultiDummyResult:
    """OLS on k - 1 dummies. Each slope is a mean difference from the reference."""
    if len(groups) < 2:
        raise DataError("need at least two groups")
    k = _outcome_index(groups, outcome, variables)
    ordered = sorted(groups, key=lambda g: g.label)
    if reference is not None:
        ref = [g for g in ordered if g.label == reference]
        if not ref:
            raise DataError(f"unknown reference group {reference!r}")
        ordered = ref + [g for g in ordered if g.label != reference]
    n, m, ssw, ssb = _one_var(ordered, k)
    df = int(n.sum()) - len(ordered)
    if df <= 0:
        raise DataError("no residual degrees of freedom")
    mse = ssw / df
    beta = m[1:] - m[0]
    se = np.sqrt(mse * (1.0 / n[0] + 1.0 / n[1:]))
    t = beta / se
    p = np.array([t_two_sided(v, df) for v in t])
    return MultiDummyResult(
        float(m[0]), tuple(g.label for g in ordered[1:]), beta, se, t, p, ssb / (ssb + ssw), df
    )
