"""One-way MANOVA: SSCP partition, determinants and Wilks's lambda."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distributions import chi2_upper_tail, f_upper_tail
from .kernels import lu_det
from .moments import DataError, GroupMoments

SINGULAR_RTOL = 1e-10


class SingularMatrixError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SscpPartition:
    within: np.ndarray
    between: np.ndarray
    total: np.ndarray
    variables: tuple[str, ...]
    n_total: int
    n_groups: int


@dataclass(frozen=True)
class WilksResult:
    lam: float
    det_within: float
    det_total: float
    f_approx: float
    df1: float
    df2: float
    p: float
    bartlett_chi2: float
    bartlett_df: float
    bartlett_p: float


def sscp_partition(groups: Sequence[GroupMoments], vars: Sequence[str] | None = None) -> SscpPartition:
    if len(groups) < 2:
        raise DataError("MANOVA needs at least two groups")
    p = groups[0].mean.size
    if any(g.mean.size != p for g in groups):
        raise DataError("groups have different numbers of variables")
    if vars is None:
        vars = tuple(f"y{i + 1}" for i in range(p))
    if len(vars) != p:
        raise DataError(f"{len(vars)} variable names for {p} variables")
    n = np.array([g.n for g in groups], dtype=float)
    means = np.vstack([g.mean for g in groups])
    dev = means - n @ means / n.sum()
    between = (dev * n[:, None]).T @ dev
    within = np.sum([g.within_sscp for g in groups], axis=0)
    return SscpPartition(within, between, within + between, tuple(vars), int(n.sum()), len(groups))


def determinant(m) -> float:
    """Determinant by LU factorisation with partial pivoting."""
    a = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"determinant needs a square matrix, got shape {a.shape}")
    return lu_det(a)[0]


def _checked_det(m, what):
    det, min_piv = lu_det(m)
    scale = np.max(np.abs(m))
    if scale == 0 or min_piv < SINGULAR_RTOL * scale:
        raise SingularMatrixError(f"{what} SSCP matrix is singular (collinear outcomes?)")
    return det


def _rao_f(lam, p, q, n_resid):
    # q = hypothesis df (k - 1), n_resid = error df (N - k)
    df1 = p * q
    if p * p + q * q - 5 > 0:
        s = math.sqrt((p * p * q * q - 4) / (p * p + q * q - 5))
    else:
        s = 1.0
    m = n_resid + q - (p + q + 1) / 2.0
    df2 = m * s - df1 / 2.0 + 1.0
    root = lam ** (1.0 / s)
    f = (1.0 - root) / root * df2 / df1
    return f, df1, df2


def wilks_test(partition: SscpPartition) -> WilksResult:
    """Wilks's lambda with Rao's F approximation (exact for two groups)."""
    p = len(partition.variables)
    k = partition.n_groups
    n = partition.n_total
    if n <= k + p:
        raise DataError(f"need more than {k + p} observations for {p} outcomes and {k} groups, have {n}")
    det_t = _checked_det(partition.total, "total")
    det_w = lu_det(partition.within)[0]
    lam = min(1.0, max(0.0, det_w / det_t))
    q = k - 1
    if lam == 0.0:
        f, df1, df2 = math.inf, p * q, math.nan
        p_val = 0.0
    else:
        f, df1, df2 = _rao_f(lam, p, q, n - k)
        f = max(f, 0.0)
        p_val = f_upper_tail(f, df1, df2)
    chi2 = -(n - 1 - (p + k) / 2.0) * math.log(lam) if lam > 0 else math.inf
    chi2 = max(chi2, 0.0)
    return WilksResult(
        lam, det_w, det_t, f, float(df1), float(df2), p_val, chi2, float(p * q), chi2_upper_tail(chi2, p * q)
    )
