"""Hot numeric kernels.

Each kernel exists twice: a plain Python/numpy implementation (``*_py``) and a
numba-compiled one (``*_nb``, ``None`` when numba is unavailable). The public
name is bound to one of them according to :mod:`hiermodel._accel`. Tests run
both paths against each other.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit, pick

__all__ = [
    "betainc",
    "gammaincc",
    "lu_det",
    "cluster_moments",
    "USE_NUMBA",
]

_EPS = 1e-15
_TINY = 1e-300
_MAXIT = 300


def _betainc_py(a, b, x):
    # regularized I_x(a, b); Lentz continued fraction, symmetry switch
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    flip = x > (a + 1.0) / (a + b + 2.0)
    if flip:
        a, b, x = b, a, 1.0 - x
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    front = math.exp(lbeta + a * math.log(x) + b * math.log1p(-x)) / a

    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    val = front * h
    if flip:
        val = 1.0 - val
    return min(1.0, max(0.0, val))


def _gammaincc_py(a, x):
    # regularized upper Q(a, x); series below a + 1, continued fraction above
    if x <= 0.0:
        return 1.0
    lead = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        ap = a
        term = 1.0 / a
        total = term
        for _ in range(_MAXIT * 10):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        val = 1.0 - total * math.exp(lead)
    else:
        b = x + 1.0 - a
        c = 1.0 / _TINY
        d = 1.0 / b
        h = d
        for i in range(1, _MAXIT + 1):
            an = -i * (i - a)
            b += 2.0
            d = an * d + b
            if abs(d) < _TINY:
                d = _TINY
            c = b + an / c
            if abs(c) < _TINY:
                c = _TINY
            d = 1.0 / d
            delta = d * c
            h *= delta
            if abs(delta - 1.0) < _EPS:
                break
        val = math.exp(lead) * h
    return min(1.0, max(0.0, val))


def _lu_det_py(m):
    """Partial-pivot LU determinant; returns (det, smallest |pivot|)."""
    a = np.array(m, dtype=np.float64)
    n = a.shape[0]
    det = 1.0
    min_piv = np.inf
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        piv = a[p, k]
        if p != k:
            a[[k, p]] = a[[p, k]]
            det = -det
        det *= piv
        min_piv = min(min_piv, abs(piv))
        if piv == 0.0:
            return 0.0, 0.0
        a[k + 1:, k] /= piv
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    return det, min_piv


def _lu_det_loops(m):
    a = m.copy()
    n = a.shape[0]
    det = 1.0
    min_piv = np.inf
    for k in range(n):
        p = k
        best = abs(a[k, k])
        for i in range(k + 1, n):
            if abs(a[i, k]) > best:
                best = abs(a[i, k])
                p = i
        if p != k:
            for j in range(n):
                tmp = a[k, j]
                a[k, j] = a[p, j]
                a[p, j] = tmp
            det = -det
        piv = a[k, k]
        det *= piv
        if abs(piv) < min_piv:
            min_piv = abs(piv)
        if piv == 0.0:
            return 0.0, 0.0
        for i in range(k + 1, n):
            f = a[i, k] / piv
            a[i, k] = f
            for j in range(k + 1, n):
                a[i, j] -= f * a[k, j]
    return det, min_piv


def _cluster_moments_py(y, codes, n_clusters):
    """Per-cluster counts and means plus the pooled within-cluster SSCP.

    ``codes`` are integers in ``[0, n_clusters)``.
    """
    y = np.asarray(y, dtype=np.float64)
    counts = np.bincount(codes, minlength=n_clusters).astype(np.float64)
    sums = np.zeros((n_clusters, y.shape[1]))
    np.add.at(sums, codes, y)
    means = sums / np.maximum(counts, 1.0)[:, None]
    dev = y - means[codes]
    return counts, means, dev.T @ dev


def _cluster_moments_loops(y, codes, n_clusters):
    n, p = y.shape
    counts = np.zeros(n_clusters)
    means = np.zeros((n_clusters, p))
    for i in range(n):
        c = codes[i]
        counts[c] += 1.0
        for k in range(p):
            means[c, k] += y[i, k]
    for c in range(n_clusters):
        if counts[c] > 0:
            for k in range(p):
                means[c, k] /= counts[c]
    sscp = np.zeros((p, p))
    dev = np.empty(p)
    for i in range(n):
        c = codes[i]
        for k in range(p):
            dev[k] = y[i, k] - means[c, k]
        for k in range(p):
            for l in range(k, p):
                sscp[k, l] += dev[k] * dev[l]
    for k in range(p):
        for l in range(k + 1, p):
            sscp[l, k] = sscp[k, l]
    return counts, means, sscp


_betainc_nb = njit(_betainc_py)
_gammaincc_nb = njit(_gammaincc_py)
_lu_det_nb = njit(_lu_det_loops)
_cluster_moments_nb = njit(_cluster_moments_loops)

_betainc = pick(_betainc_nb, _betainc_py)
_gammaincc = pick(_gammaincc_nb, _gammaincc_py)
_lu_det = pick(_lu_det_nb, _lu_det_py)
_cluster_moments = pick(_cluster_moments_nb, _cluster_moments_py)


def betainc(a, b, x):
    """Regularized incomplete beta function I_x(a, b)."""
    return float(_betainc(float(a), float(b), float(x)))


def gammaincc(a, x):
    """Regularized upper incomplete gamma function Q(a, x)."""
    return float(_gammaincc(float(a), float(x)))


def lu_det(m):
    det, min_piv = _lu_det(np.ascontiguousarray(m, dtype=np.float64))
    return float(det), float(min_piv)


def cluster_moments(y, codes, n_clusters):
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    return _cluster_moments(y, codes, int(n_clusters))
