"""Two-level variance/covariance decomposition, random-intercept model,
two-level factor structures and a clustered-data simulator.

Notation: observation ``i`` in cluster ``j``, ``N`` observations in ``J``
clusters. ``s_pw`` is the pooled within-cluster covariance and ``s_b`` the
scaled between-cluster covariance; their expectations are ``Sigma_W`` and
``Sigma_W + c * Sigma_B``.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distributions import chi2_upper_tail
from .kernels import cluster_moments
from .moments import DataError, DataTable
from .optimize import ConvergenceError, bfgs
from .sem import NotPositiveDefiniteError, ParamVector, fml, fml_gradient_matrix


@dataclass(frozen=True)
class TwoLevelMoments:
    variables: tuple[str, ...]
    s_pw: np.ndarray
    s_b: np.ndarray
    grand_mean: np.ndarray
    n_total: int
    j_clusters: int
    cluster_sizes: np.ndarray
    c_scale: float


@dataclass(frozen=True)
class VarianceComponents:
    gamma00: float
    sigma2_between: float
    sigma2_within: float
    icc: float
    truncated: bool = False


def c_scale(cluster_sizes) -> float:
    """(N^2 - sum n_j^2) / (N (J - 1)); equals n for balanced clusters."""
    nj = np.asarray(cluster_sizes, dtype=float)
    n, j = nj.sum(), nj.size
    return float((n * n - np.sum(nj * nj)) / (n * (j - 1)))


def decompose_arrays(y, codes, variables: Sequence[str] | None = None) -> TwoLevelMoments:
    """Decompose ``y`` (N x p) given integer cluster codes ``0..J-1``."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    codes = np.asarray(codes)
    j = int(codes.max()) + 1 if codes.size else 0
    counts, means, within = cluster_moments(y, codes, j)
    if np.any(counts == 0):
        raise DataError("cluster codes must be contiguous 0..J-1")
    if j < 2:
        raise DataError(f"two-level decomposition needs at least 2 clusters, got {j}")
    n = y.shape[0]
    if n == j:
        raise DataError("every cluster is a singleton; within-cluster variance is undefined")
    grand = counts @ means / n
    dev = means - grand
    between = (dev * counts[:, None]).T @ dev
    if variables is None:
        variables = tuple(f"y{i + 1}" for i in range(y.shape[1]))
    return TwoLevelMoments(
        tuple(variables),
        within / (n - j),
        between / (j - 1),
        grand,
        n,
        j,
        counts.astype(int),
        c_scale(counts),
    )


def decompose_two_level(table: DataTable, vars: Sequence[str], cluster: str | None = None) -> TwoLevelMoments:
    cluster = table.cluster_column if cluster is None else cluster
    if cluster is None:
        raise DataError("table has no cluster column")
    labels = table.labels(cluster)
    _, codes = np.unique(labels, return_inverse=True)
    return decompose_arrays(table.select(vars), codes, vars)


def components_from_moments(m: TwoLevelMoments, k: int = 0) -> VarianceComponents:
    """Method-of-moments random-intercept estimates for variable ``k``.

    A negative between-cluster estimate is set to 0 and flagged.
    """
    s_w = float(m.s_pw[k, k])
    raw = (float(m.s_b[k, k]) - s_w) / m.c_scale
    s_b = max(0.0, raw)
    total = s_b + s_w
    icc = s_b / total if total > 0 else 0.0
    return VarianceComponents(float(m.grand_mean[k]), s_b, s_w, icc, raw < 0)


def fit_random_intercept(table: DataTable, outcome: str, cluster: str | None = None) -> VarianceComponents:
    """Unconditional random-intercept model y_ij = gamma00 + u_j + e_ij."""
    return components_from_moments(decompose_two_level(table, [outcome], cluster))


# two-level factor structure ---------------------------------------------------


@dataclass(frozen=True)
class TwoLevelModel:
    """Parameter matrices of the two-level factor model.

    ``psi_b`` defaults to ``psi`` (one factor covariance at both levels) and
    ``loadings_b`` (used only in the mean structure) defaults to ``loadings``.
    """

    loadings: np.ndarray
    psi: np.ndarray
    theta_w: np.ndarray
    theta_b: np.ndarray
    alpha_b: np.ndarray | None = None
    nu_b: np.ndarray | None = None
    loadings_b: np.ndarray | None = None
    psi_b: np.ndarray | None = None

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        if lam.shape[0] == 1 and np.ndim(self.loadings) == 1:
            lam = lam.T
        p, m = lam.shape
        object.__setattr__(self, "loadings", lam)
        for name, shape in (("psi", (m, m)), ("theta_w", (p, p)), ("theta_b", (p, p))):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim == 1 and v.size == shape[0]:
                v = np.diag(v)
            v = np.atleast_2d(v)
            if v.shape != shape:
                raise DataError(f"{name} must be {shape[0]}x{shape[1]}, got {v.shape}")
            object.__setattr__(self, name, v)
        alpha = np.zeros(p) if self.alpha_b is None else np.asarray(self.alpha_b, dtype=float).ravel()
        nu = np.zeros(m) if self.nu_b is None else np.asarray(self.nu_b, dtype=float).ravel()
        lam_b = lam if self.loadings_b is None else np.atleast_2d(np.asarray(self.loadings_b, dtype=float))
        if alpha.size != p or nu.size != lam_b.shape[1] or lam_b.shape[0] != p:
            raise DataError("alpha_b, nu_b and loadings_b are not conformable")
        object.__setattr__(self, "alpha_b", alpha)
        object.__setattr__(self, "nu_b", nu)
        object.__setattr__(self, "loadings_b", lam_b)
        if self.psi_b is not None:
            pb = np.atleast_2d(np.asarray(self.psi_b, dtype=float))
            if pb.shape != (m, m):
                raise DataError(f"psi_b must be {m}x{m}")
            object.__setattr__(self, "psi_b", pb)


def implied_two_level(model: TwoLevelModel):
    """Return (Sigma_W, Sigma_B, mu)."""
    lam = model.loadings
    psi_b = model.psi if model.psi_b is None else model.psi_b
    sigma_w = lam @ model.psi @ lam.T + model.theta_w
    sigma_b = lam @ psi_b @ lam.T + model.theta_b
    mu = model.alpha_b + model.loadings_b @ model.nu_b
    return sigma_w, sigma_b, mu


@dataclass(frozen=True)
class TwoLevelPattern:
    """Fixed/free pattern for a two-level factor model.

    Values double as fixed values and starting values. ``psi_free`` covers
    the lower triangle of ``psi``; residual covariances are diagonal. When
    ``separate_psi_b`` is set the between level gets its own factor
    covariance ``psi_b`` (free wherever ``psi_free`` is).
    """

    loadings: np.ndarray
    loadings_free: np.ndarray
    psi: np.ndarray
    psi_free: np.ndarray
    theta_w: np.ndarray
    theta_w_free: np.ndarray
    theta_b: np.ndarray
    theta_b_free: np.ndarray
    separate_psi_b: bool = False
    psi_b: np.ndarray | None = None

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        if np.ndim(self.loadings) == 1:
            lam = lam.T
        p, m = lam.shape
        object.__setattr__(self, "loadings", lam)
        object.__setattr__(self, "loadings_free", np.asarray(self.loadings_free, dtype=bool).reshape(p, m))
        psi = np.atleast_2d(np.asarray(self.psi, dtype=float)).reshape(m, m)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "psi_free", np.tril(np.asarray(self.psi_free, dtype=bool).reshape(m, m)))
        for name in ("theta_w", "theta_b"):
            v = np.asarray(getattr(self, name), dtype=float)
            v = np.diag(v).copy() if v.ndim == 2 else v.ravel()
            object.__setattr__(self, name, v)
            object.__setattr__(self, name + "_free", np.asarray(getattr(self, name + "_free"), dtype=bool).ravel())
        pb = psi if self.psi_b is None else np.atleast_2d(np.asarray(self.psi_b, dtype=float)).reshape(m, m)
        object.__setattr__(self, "psi_b", pb)

    @classmethod
    def one_factor(cls, p: int, theta_b_free: bool = True, separate_psi_b: bool = False) -> "TwoLevelPattern":
        """One factor, first loading fixed at 1, diagonal residuals at both levels."""
        free = np.ones((p, 1), dtype=bool)
        free[0, 0] = False
        return cls(
            np.ones((p, 1)), free, np.ones((1, 1)), np.ones((1, 1), dtype=bool),
            np.full(p, 0.5), np.ones(p, dtype=bool),
            np.full(p, 0.1) if theta_b_free else np.zeros(p), np.full(p, theta_b_free),
            separate_psi_b,
        )

    def _blocks(self):
        psi_idx = list(zip(*np.nonzero(self.psi_free)))
        blocks = [
            ("lambda", int(self.loadings_free.sum())),
            ("psi", len(psi_idx)),
            ("psi_b", len(psi_idx) if self.separate_psi_b else 0),
            ("theta_w", int(self.theta_w_free.sum())),
            ("theta_b", int(self.theta_b_free.sum())),
        ]
        return blocks, psi_idx

    @property
    def n_free(self) -> int:
        return sum(k for _, k in self._blocks()[0])

    def param_names(self) -> list[str]:
        p, m = self.loadings.shape
        names = [f"lambda[{i},{j}]" for i, j in zip(*np.nonzero(self.loadings_free))]
        _, psi_idx = self._blocks()
        names += [f"psi[{i},{j}]" for i, j in psi_idx]
        if self.separate_psi_b:
            names += [f"psi_b[{i},{j}]" for i, j in psi_idx]
        names += [f"theta_w[{i}]" for i in np.flatnonzero(self.theta_w_free)]
        names += [f"theta_b[{i}]" for i in np.flatnonzero(self.theta_b_free)]
        return names

    def log_slots(self) -> np.ndarray:
        """Positions optimised on the log scale: the within-level variances.

        Between-level variances stay on the natural scale so that their
        estimates are not pushed away from zero.
        """
        _, psi_idx = self._blocks()
        out = []
        out += [False] * int(self.loadings_free.sum())
        diag = [i == j for i, j in psi_idx]
        out += diag
        if self.separate_psi_b:
            out += [False] * len(psi_idx)
        out += [True] * int(self.theta_w_free.sum())
        out += [False] * int(self.theta_b_free.sum())
        return np.array(out, dtype=bool)

    def starts(self) -> np.ndarray:
        _, psi_idx = self._blocks()
        v = [self.loadings[self.loadings_free]]
        v.append(np.array([self.psi[i, j] for i, j in psi_idx]))
        if self.separate_psi_b:
            v.append(np.array([self.psi_b[i, j] for i, j in psi_idx]))
        v += [self.theta_w[self.theta_w_free], self.theta_b[self.theta_b_free]]
        return np.concatenate(v)

    def unpack(self, values) -> TwoLevelModel:
        values = np.asarray(values, dtype=float)
        if values.size != self.n_free:
            raise DataError(f"expected {self.n_free} free parameters, got {values.size}")
        _, psi_idx = self._blocks()
        k = 0
        lam = self.loadings.copy()
        nl = int(self.loadings_free.sum())
        lam[self.loadings_free] = values[k:k + nl]
        k += nl

        def sym(base):
            nonlocal k
            out = base.copy()
            for i, j in psi_idx:
                out[i, j] = out[j, i] = values[k]
                k += 1
            return out

        psi = sym(self.psi)
        psi_b = sym(self.psi_b) if self.separate_psi_b else None
        tw = self.theta_w.copy()
        nw = int(self.theta_w_free.sum())
        tw[self.theta_w_free] = values[k:k + nw]
        k += nw
        tb = self.theta_b.copy()
        tb[self.theta_b_free] = values[k:]
        return TwoLevelModel(lam, psi, np.diag(tw), np.diag(tb), psi_b=psi_b)

    def gradient(self, model: TwoLevelModel, g_w: np.ndarray, g_b: np.ndarray) -> np.ndarray:
        """Chain rule from d/dSigma_W and d/dSigma_B to the free parameters."""
        lam = model.loadings
        psi_b = model.psi if model.psi_b is None else model.psi_b
        d_lam = 2.0 * (g_w @ lam @ model.psi + g_b @ lam @ psi_b)
        h_w = lam.T @ g_w @ lam
        h_b = lam.T @ g_b @ lam
        _, psi_idx = self._blocks()

        def dpsi(h):
            return [h[i, j] if i == j else 2.0 * h[i, j] for i, j in psi_idx]

        parts = [d_lam[self.loadings_free]]
        if self.separate_psi_b:
            parts += [np.array(dpsi(h_w)), np.array(dpsi(h_b))]
        else:
            parts.append(np.array(dpsi(h_w + h_b)))
        parts += [np.diag(g_w)[self.theta_w_free], np.diag(g_b)[self.theta_b_free]]
        return np.concatenate([np.asarray(x, dtype=float).ravel() for x in parts])


@dataclass(frozen=True)
class TwoLevelFitReport:
    pattern: TwoLevelPattern
    estimates: ParamVector
    standard_errors: np.ndarray | None
    fml_within: float
    fml_between: float
    discrepancy: float
    chi_square: float
    df: int
    p: float
    sigma_w: np.ndarray
    sigma_b: np.ndarray
    iterations: int
    gradient_norm: float
    notes: tuple[str, ...] = field(default=())

    @property
    def model(self) -> TwoLevelModel:
        return self.pattern.unpack(self.estimates.values)

    def to_dict(self) -> dict:
        se = self.standard_errors
        return {
            "parameters": [
                {"name": n, "estimate": float(v), "se": None if se is None else float(se[i])}
                for i, (n, v) in enumerate(zip(self.estimates.names, self.estimates.values))
            ],
            "fml_within": self.fml_within,
            "fml_between": self.fml_between,
            "discrepancy": self.discrepancy,
            "chi_square": self.chi_square,
            "df": self.df,
            "p": None if math.isnan(self.p) else self.p,
            "sigma_w": self.sigma_w.tolist(),
            "sigma_b": self.sigma_b.tolist(),
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "notes": list(self.notes),
        }


def two_level_discrepancy(pattern: TwoLevelPattern, values, moments: TwoLevelMoments):
    """Weighted discrepancy and its gradient in natural parameters.

    ``((N - J) F(S_PW, Sigma_W) + (J - 1) F(S_B, Sigma_W + c Sigma_B)) / (N - 1)``
    """
    model = pattern.unpack(values)
    sw, sb, _ = implied_two_level(model)
    c = moments.c_scale
    a = (moments.n_total - moments.j_clusters) / (moments.n_total - 1)
    b = (moments.j_clusters - 1) / (moments.n_total - 1)
    s2 = sw + c * sb
    f_w = fml(moments.s_pw, sw)
    f_b = fml(moments.s_b, s2)
    g1 = fml_gradient_matrix(moments.s_pw, sw)
    g2 = fml_gradient_matrix(moments.s_b, s2)
    grad = pattern.gradient(model, a * g1 + b * g2, b * c * g2)
    return a * f_w + b * f_b, grad, f_w, f_b


def fit_two_level_sem(
    moments: TwoLevelMoments,
    pattern: TwoLevelPattern,
    start=None,
    maxiter: int = 500,
    standard_errors: bool = True,
    gtol: float = 1e-9,
    ftol: float = 1e-12,
) -> TwoLevelFitReport:
    """Pseudo-balanced (limited-information) ML fit of a two-level factor model."""
    try:
        np.linalg.cholesky(moments.s_pw)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("pooled within-cluster covariance is not positive definite") from None
    p = moments.s_pw.shape[0]
    df = p * (p + 1) - pattern.n_free
    if df < 0:
        raise DataError(f"two-level model has negative degrees of freedom ({df})")
    logs = pattern.log_slots()
    x0 = pattern.starts() if start is None else np.asarray(start, dtype=float)
    if np.any(x0[logs] <= 0):
        raise DataError("variance starting values must be positive")

    def nat(z):
        v = z.copy()
        v[logs] = np.exp(z[logs])
        return v

    def obj(z):
        model = pattern.unpack(nat(z))
        sw, sb, _ = implied_two_level(model)
        c = moments.c_scale
        a = (moments.n_total - moments.j_clusters) / (moments.n_total - 1)
        b = (moments.j_clusters - 1) / (moments.n_total - 1)
        return a * fml(moments.s_pw, sw) + b * fml(moments.s_b, sw + c * sb)

    def grad(z):
        v = nat(z)
        _, g, _, _ = two_level_discrepancy(pattern, v, moments)
        g[logs] *= v[logs]
        return g

    z0 = x0.copy()
    z0[logs] = np.log(x0[logs])
    def stop(z, g):
        out = g.copy()
        out[logs] = g[logs] / np.exp(z[logs])
        return out

    res = bfgs(obj, z0, grad, ftol=ftol, gtol=gtol, maxiter=maxiter, stop_grad=stop)
    if not res.converged:
        raise ConvergenceError(
            f"two-level fit did not converge after {res.iterations} iterations "
            f"(gradient inf-norm {res.grad_norm:.3g}): {res.message}"
        )
    est = nat(res.x)
    disc, _, f_w, f_b = two_level_discrepancy(pattern, est, moments)
    model = pattern.unpack(est)
    sw, sb, _ = implied_two_level(model)
    notes = []
    if np.any(np.diag(model.theta_b) < 0):
        notes.append("negative between-level residual variance estimate")
    se = None
    if standard_errors:
        se, note = _two_level_se(pattern, est, moments)
        if note:
            notes.append(note)
    chi2 = (moments.n_total - 1) * disc
    return TwoLevelFitReport(
        pattern,
        ParamVector(tuple(pattern.param_names()), est),
        se,
        f_w,
        f_b,
        disc,
        chi2,
        df,
        chi2_upper_tail(chi2, df) if df > 0 else float("nan"),
        sw,
        sb,
        res.iterations,
        res.grad_norm,
        tuple(notes),
    )


def _two_level_se(pattern, est, moments):
    k = est.size
    hess = np.empty((k, k))
    for i in range(k):
        h = 1e-5 * max(1.0, abs(est[i]))
        up, dn = est.copy(), est.copy()
        up[i] += h
        dn[i] -= h
        try:
            hess[:, i] = (
                two_level_discrepancy(pattern, up, moments)[1] - two_level_discrepancy(pattern, dn, moments)[1]
            ) / (2 * h)
        except np.linalg.LinAlgError:
            return None, "Hessian could not be evaluated; standard errors omitted"
    info = 0.25 * (moments.n_total - 1) * (hess + hess.T)
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        return None, "Hessian is not positive definite at the optimum; standard errors omitted"
    return np.sqrt(np.diag(np.linalg.inv(info))), None


# simulation --------------------------------------------------------------------


def _psd_factor(m, what):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1] or not np.allclose(m, m.T):
        raise DataError(f"{what} must be a symmetric square matrix")
    w, v = np.linalg.eigh(m)
    scale = max(1.0, float(np.max(np.abs(w))))
    if np.min(w) < -1e-10 * scale:
        raise DataError(f"{what} is not positive semidefinite (smallest eigenvalue {np.min(w):.3g})")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class SimulationConfig:
    mu: np.ndarray
    sigma_b: np.ndarray
    sigma_w: np.ndarray
    clusters: int
    cluster_size: int | tuple[int, ...]
    seed: int = 0
    replications: int = 1

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        p = mu.size
        object.__setattr__(self, "mu", mu)
        for name in ("sigma_b", "sigma_w"):
            m = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if m.shape != (p, p):
                raise DataError(f"{name} must be {p}x{p}, got {m.shape}")
            object.__setattr__(self, name, m)
        if int(self.clusters) < 1:
            raise DataError(f"clusters must be >= 1, got {self.clusters}")
        sizes = self.cluster_size
        if isinstance(sizes, (list, tuple, np.ndarray)):
            sizes = tuple(int(s) for s in sizes)
            if len(sizes) != int(self.clusters):
                raise DataError("cluster_size list must have one entry per cluster")
            if min(sizes) < 1:
                raise DataError("cluster sizes must be >= 1")
        elif int(sizes) < 1:
            raise DataError(f"cluster_size must be >= 1, got {sizes}")
        else:
            sizes = int(sizes)
        object.__setattr__(self, "cluster_size", sizes)
        if int(self.replications) < 1:
            raise DataError(f"replications must be >= 1, got {self.replications}")

    @classmethod
    def from_json(cls, text: str) -> "SimulationConfig":
        doc = json.loads(text)
        try:
            return cls(
                doc["mu"], doc["sigma_b"], doc["sigma_w"], int(doc["clusters"]), doc["cluster_size"],
                int(doc.get("seed", 0)), int(doc.get("replications", 1)),
            )
        except KeyError as exc:
            raise DataError(f"simulator config missing field {exc}") from None


def _sizes(j, n):
    if isinstance(n, (int, np.integer)):
        return np.full(j, int(n))
    return np.asarray(n, dtype=int)


def draw_clustered(rng: np.random.Generator, mu, factor_b, factor_w, sizes):
    """One dataset as (y, cluster codes). Factors are Cholesky-type roots."""
    j = sizes.size
    p = factor_w.shape[0]
    codes = np.repeat(np.arange(j), sizes)
    u = rng.standard_normal((j, p)) @ factor_b.T
    e = rng.standard_normal((codes.size, p)) @ factor_w.T
    return mu + u[codes] + e, codes


def generate_clustered(params, j: int, n, seed: int, variables: Sequence[str] | None = None) -> DataTable:
    """Simulate y_ij = mu + u_j + e_ij with u_j ~ N(0, Sigma_B), e_ij ~ N(0, Sigma_W).

    ``params`` is a mapping with ``mu``, ``sigma_b`` and ``sigma_w``. ``n`` is a
    common cluster size or one size per cluster.
    """
    cfg = SimulationConfig(params["mu"], params["sigma_b"], params["sigma_w"], j, n, seed)
    fb = _psd_factor(cfg.sigma_b, "sigma_b")
    fw = _psd_factor(cfg.sigma_w, "sigma_w")
    try:
        np.linalg.cholesky(cfg.sigma_w)
    except np.linalg.LinAlgError:
        raise DataError("sigma_w must be positive definite") from None
    rng = np.random.default_rng(seed)
    y, codes = draw_clustered(rng, cfg.mu, fb, fw, _sizes(cfg.clusters, cfg.cluster_size))
    p = cfg.mu.size
    if variables is None:
        variables = ("y",) if p == 1 else tuple(f"y{i + 1}" for i in range(p))
    width = len(str(cfg.clusters - 1))
    labels = np.array([f"c{c:0{width}d}" for c in codes])
    return DataTable(tuple(variables), y, cluster_column="cluster", cluster_labels=labels)


def replication_seeds(master: int, replications: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(master).spawn(replications)


@dataclass(frozen=True)
class ReplicationStats:
    s_pw: np.ndarray
    s_b: np.ndarray
    sigma2_within: np.ndarray
    sigma2_between: np.ndarray
    icc: np.ndarray
    truncated: np.ndarray


def simulate(cfg: SimulationConfig, workers: int = 1, keep_data: bool = False):
    """Run ``cfg.replications`` independent replications.

    Replication ``r`` draws from a sub-seed spawned from ``(cfg.seed, r)``, so
    results do not depend on ``workers``. Returns ``(stats, datasets)`` where
    ``datasets`` is a list of (y, codes) pairs when ``keep_data`` is set.
    """
    fb = _psd_factor(cfg.sigma_b, "sigma_b")
    fw = _psd_factor(cfg.sigma_w, "sigma_w")
    try:
        np.linalg.cholesky(cfg.sigma_w)
    except np.linalg.LinAlgError:
        raise DataError("sigma_w must be positive definite") from None
    sizes = _sizes(cfg.clusters, cfg.cluster_size)
    if cfg.clusters < 2:
        raise DataError("simulation needs at least 2 clusters to decompose")
    seeds = replication_seeds(cfg.seed, cfg.replications)

    def run(seq):
        rng = np.random.default_rng(seq)
        y, codes = draw_clustered(rng, cfg.mu, fb, fw, sizes)
        m = decompose_arrays(y, codes)
        comps = [components_from_moments(m, k) for k in range(cfg.mu.size)]
        return m, comps, ((y, codes) if keep_data else None)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, seeds))
    else:
        results = [run(s) for s in seeds]
    stats = ReplicationStats(
        np.array([r[0].s_pw for r in results]),
        np.array([r[0].s_b for r in results]),
        np.array([[c.sigma2_within for c in r[1]] for r in results]),
        np.array([[c.sigma2_between for c in r[1]] for r in results]),
        np.array([[c.icc for c in r[1]] for r in results]),
        np.array([[c.truncated for c in r[1]] for r in results]),
    )
    data = [r[2] for r in results] if keep_data else None
    return stats, data


def mc_mean(values) -> tuple[np.ndarray, np.ndarray]:
    """Compensated mean and Monte Carlo standard error along axis 0."""
    a = np.asarray(values, dtype=float)
    r = a.shape[0]
    flat = a.reshape(r, -1)
    mean = np.array([math.fsum(flat[:, k]) / r for k in range(flat.shape[1])])
    dev = flat - mean
    var = np.array([math.fsum(dev[:, k] ** 2) for k in range(flat.shape[1])]) / max(r - 1, 1)
    return mean.reshape(a.shape[1:]), np.sqrt(var / r).reshape(a.shape[1:])


def summarize(stats: ReplicationStats) -> dict:
    out = {"replications": int(stats.icc.shape[0])}
    for name in ("s_pw", "s_b", "sigma2_within", "sigma2_between", "icc"):
        mean, se = mc_mean(getattr(stats, name))
        out[name] = {"mean": mean.tolist(), "mc_se": se.tolist()}
    out["truncated_fraction"] = stats.truncated.mean(axis=0).tolist()
    return out
