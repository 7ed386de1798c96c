"""Upper-tail probabilities for the F, t, chi-square and normal distributions."""
import math

from .kernels import betainc, gammaincc


def _check_df(*dfs):
    for df in dfs:
        if not (df > 0) or not math.isfinite(df):
            raise ValueError(f"degrees of freedom must be positive and finite, got {df!r}")


def f_upper_tail(f, df1, df2):
    """P(F > f) for an F(df1, df2) variate."""
    _check_df(df1, df2)
    if f < 0:
        raise ValueError(f"F statistic must be >= 0, got {f!r}")
    if f == 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))


def t_two_sided(t, df):
    """Two-sided p-value of a t statistic, via ``f_upper_tail(t**2, 1, df)``."""
    _check_df(df)
    return f_upper_tail(t * t, 1.0, df)


def chi2_upper_tail(x, df):
    """P(X > x) for a chi-square(df) variate."""
    _check_df(df)
    if x < 0:
        raise ValueError(f"chi-square statistic must be >= 0, got {x!r}")
    return gammaincc(df / 2.0, x / 2.0)


def normal_upper_tail(z):
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def normal_two_sided(z):
    return math.erfc(abs(z) / math.sqrt(2.0))
