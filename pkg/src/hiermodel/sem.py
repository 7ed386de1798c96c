"""Maximum-likelihood covariance-structure fitting for MIMIC/CFA models.

The model relates exogenous observed variables ``x`` to latent factors
``eta`` and latent factors to indicators ``y``::

    eta = Gamma x + zeta,     var(zeta) = Psi (diagonal)
    y   = Lambda eta + eps,   var(eps)  = Theta (diagonal)

The covariance of ``x`` is held at its sample value. Observed variables
are ordered exogenous first, then indicators.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .distributions import chi2_upper_tail
from .kernels import lu_det
from .moments import DataError, PooledMoments
from .optimize import ConvergenceError, bfgs


class ModelError(ValueError):
    """Model specification is inconsistent or not identified."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


def _mask(values, free, shape):
    v = np.zeros(shape) if values is None else np.array(values, dtype=float).reshape(shape)
    f = np.zeros(shape, dtype=bool) if free is None else np.array(free, dtype=bool).reshape(shape)
    return v, f


@dataclass(frozen=True)
class PathModel:
    """Fixed/free patterns for loadings, structural paths and variances.

    For every matrix ``X`` there is a value array and a boolean ``X_free``
    mask. Values of free entries are only starting values, and only when
    ``fit_ml`` is called with ``use_model_starts=True``.
    """

    exogenous: tuple[str, ...]
    indicators: tuple[str, ...]
    latents: tuple[str, ...]
    loadings: np.ndarray
    loadings_free: np.ndarray
    gamma: np.ndarray
    gamma_free: np.ndarray
    psi: np.ndarray
    psi_free: np.ndarray
    theta: np.ndarray
    theta_free: np.ndarray

    def __post_init__(self):
        py, m, q = len(self.indicators), len(self.latents), len(self.exogenous)
        for name, shape in (
            ("loadings", (py, m)),
            ("gamma", (m, q)),
            ("psi", (m,)),
            ("theta", (py,)),
        ):
            v, f = _mask(getattr(self, name), getattr(self, name + "_free"), shape)
            v.setflags(write=False)
            f.setflags(write=False)
            object.__setattr__(self, name, v)
            object.__setattr__(self, name + "_free", f)
        for a in ("exogenous", "indicators", "latents"):
            object.__setattr__(self, a, tuple(getattr(self, a)))
        names = self.observed
        if len(set(names)) != len(names):
            raise ModelError("observed variable names must be unique")

    @property
    def observed(self) -> tuple[str, ...]:
        return self.exogenous + self.indicators

    @property
    def n_free(self) -> int:
        return int(
            self.loadings_free.sum() + self.gamma_free.sum() + self.psi_free.sum() + self.theta_free.sum()
        )

    @property
    def n_exogenous_moments(self) -> int:
        q = len(self.exogenous)
        return q * (q + 1) // 2

    @property
    def df(self) -> int:
        p = len(self.observed)
        return p * (p + 1) // 2 - self.n_free - self.n_exogenous_moments

    def param_names(self) -> list[str]:
        names = []
        for i, j in zip(*np.nonzero(self.loadings_free)):
            names.append(f"{self.latents[j]}=~{self.indicators[i]}")
        for i, j in zip(*np.nonzero(self.gamma_free)):
            names.append(f"{self.latents[i]}~{self.exogenous[j]}")
        for i in np.flatnonzero(self.psi_free):
            names.append(f"{self.latents[i]}~~{self.latents[i]}")
        for i in np.flatnonzero(self.theta_free):
            names.append(f"{self.indicators[i]}~~{self.indicators[i]}")
        return names

    def check_identified(self):
        for j, lat in enumerate(self.latents):
            col = self.loadings[:, j]
            fixed = ~self.loadings_free[:, j]
            if not (np.any(fixed & (col != 0)) or not self.psi_free[j]):
                raise ModelError(f"latent {lat!r} has no metric: fix a loading or its variance")
        if self.df < 0:
            raise ModelError(f"model has negative degrees of freedom ({self.df})")

    @classmethod
    def mimic(
        cls,
        exogenous: Sequence[str],
        indicators: Sequence[str],
        anchor: str | None = None,
        latent: str = "eta",
    ) -> "PathModel":
        """One latent caused by ``exogenous`` and measured by ``indicators``.

        ``anchor`` (default: first indicator) gets its loading fixed at 1.
        """
        indicators = tuple(indicators)
        anchor = indicators[0] if anchor is None else anchor
        if anchor not in indicators:
            raise ModelError(f"anchor {anchor!r} is not an indicator")
        py, q = len(indicators), len(exogenous)
        lam = np.ones((py, 1))
        lam_free = np.ones((py, 1), dtype=bool)
        lam_free[indicators.index(anchor), 0] = False
        return cls(
            tuple(exogenous), indicators, (latent,),
            lam, lam_free,
            np.zeros((1, q)), np.ones((1, q), dtype=bool),
            np.ones(1), np.ones(1, dtype=bool),
            np.ones(py), np.ones(py, dtype=bool),
        )

    def with_anchor(self, anchor: str, latent: int = 0) -> "PathModel":
        """Same model with the metric moved to ``anchor``'s loading."""
        i = self.indicators.index(anchor)
        lam = np.array(self.loadings)
        free = np.array(self.loadings_free)
        col = free[:, latent] | (lam[:, latent] != 0)
        free[:, latent] = col
        lam[col, latent] = 1.0
        free[i, latent] = False
        return replace(self, loadings=lam, loadings_free=free)

    # serialisation ---------------------------------------------------------

    def to_dict(self) -> dict:
        def entries(values, free, rows, cols, rkey, ckey):
            out = []
            for i, r in enumerate(rows):
                for j, c in enumerate(cols):
                    if free[i, j] or values[i, j] != 0:
                        out.append({rkey: r, ckey: c, "free": bool(free[i, j]), "value": float(values[i, j])})
            return out

        return {
            "exogenous": list(self.exogenous),
            "latents": list(self.latents),
            "indicators": list(self.indicators),
            "loadings": entries(self.loadings, self.loadings_free, self.indicators, self.latents, "indicator", "latent"),
            "paths": entries(self.gamma, self.gamma_free, self.latents, self.exogenous, "latent", "exogenous"),
            "psi": [
                {"latent": l, "free": bool(f), "value": float(v)}
                for l, f, v in zip(self.latents, self.psi_free, self.psi)
            ],
            "theta": [
                {"indicator": l, "free": bool(f), "value": float(v)}
                for l, f, v in zip(self.indicators, self.theta_free, self.theta)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PathModel":
        """Build a model from the JSON model-specification schema.

        Loadings and paths that are not listed are fixed at zero. Variances
        that are not listed are free.
        """
        try:
            exo = tuple(doc.get("exogenous", ()))
            lat = tuple(doc["latents"])
            ind = tuple(doc["indicators"])
            lam, lam_f = np.zeros((len(ind), len(lat))), np.zeros((len(ind), len(lat)), dtype=bool)
            for e in doc.get("loadings", ()):
                i, j = ind.index(e["indicator"]), lat.index(e["latent"])
                lam[i, j] = e.get("value", 1.0)
                lam_f[i, j] = e.get("free", True)
            gam, gam_f = np.zeros((len(lat), len(exo))), np.zeros((len(lat), len(exo)), dtype=bool)
            for e in doc.get("paths", ()):
                i, j = lat.index(e["latent"]), exo.index(e["exogenous"])
                gam[i, j] = e.get("value", 0.0)
                gam_f[i, j] = e.get("free", True)
            psi, psi_f = np.ones(len(lat)), np.ones(len(lat), dtype=bool)
            for e in doc.get("psi", ()):
                i = lat.index(e["latent"])
                psi[i] = e.get("value", 1.0)
                psi_f[i] = e.get("free", True)
            th, th_f = np.ones(len(ind)), np.ones(len(ind), dtype=bool)
            for e in doc.get("theta", ()):
                i = ind.index(e["indicator"])
                th[i] = e.get("value", 1.0)
                th_f[i] = e.get("free", True)
        except (KeyError, ValueError) as exc:
            raise ModelError(f"bad model specification: {exc}") from None
        return cls(exo, ind, lat, lam, lam_f, gam, gam_f, psi, psi_f, th, th_f)

    @classmethod
    def from_json(cls, text: str) -> "PathModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ParamVector:
    names: tuple[str, ...]
    values: np.ndarray

    def __len__(self):
        return len(self.values)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])


@dataclass(frozen=True)
class Standardized:
    gamma_std: np.ndarray
    loadings_std: np.ndarray
    residual_variance_std: np.ndarray
    r2_latent: np.ndarray


@dataclass(frozen=True)
class FitReport:
    model: PathModel
    estimates: ParamVector
    standard_errors: np.ndarray | None
    fml: float
    chi_square: float
    df: int
    p: float
    n: int
    implied_covariance: np.ndarray
    sample_covariance: np.ndarray
    exogenous_covariance: np.ndarray
    iterations: int
    gradient_norm: float
    notes: tuple[str, ...] = ()
    standardized: Standardized | None = field(default=None)

    def matrices(self):
        return unpack(self.model, self.estimates.values)

    def to_dict(self) -> dict:
        se = self.standard_errors
        st = self.standardized
        return {
            "parameters": [
                {
                    "name": n,
                    "estimate": float(v),
                    "se": None if se is None or not np.isfinite(se[i]) else float(se[i]),
                }
                for i, (n, v) in enumerate(zip(self.estimates.names, self.estimates.values))
            ],
            "fml": self.fml,
            "chi_square": self.chi_square,
            "df": self.df,
            "p": self.p,
            "n": self.n,
            "observed": list(self.model.observed),
            "implied_covariance": self.implied_covariance.tolist(),
            "standardized": None
            if st is None
            else {
                "gamma_std": st.gamma_std.tolist(),
                "loadings_std": st.loadings_std.tolist(),
                "residual_variance_std": st.residual_variance_std.tolist(),
                "r2_latent": st.r2_latent.tolist(),
            },
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "notes": list(self.notes),
        }


# parameter packing -----------------------------------------------------------


def unpack(model: PathModel, values):
    """Free-parameter vector (natural scale) -> (Lambda, Gamma, psi, theta)."""
    values = np.asarray(values, dtype=float)
    if values.size != model.n_free:
        raise ModelError(f"expected {model.n_free} free parameters, got {values.size}")
    lam = np.array(model.loadings)
    gam = np.array(model.gamma)
    psi = np.array(model.psi)
    th = np.array(model.theta)
    k = 0
    for arr, free in ((lam, model.loadings_free), (gam, model.gamma_free), (psi, model.psi_free), (th, model.theta_free)):
        nf = int(free.sum())
        arr[free] = values[k:k + nf]
        k += nf
    return lam, gam, psi, th


def _variance_slots(model: PathModel) -> np.ndarray:
    nl = int(model.loadings_free.sum() + model.gamma_free.sum())
    out = np.zeros(model.n_free, dtype=bool)
    out[nl:] = True
    return out


def implied_covariance(model: PathModel, params, exo_cov) -> np.ndarray:
    """Model-implied covariance of (exogenous, indicators)."""
    lam, gam, psi, th = unpack(model, getattr(params, "values", params))
    phi = np.atleast_2d(np.asarray(exo_cov, dtype=float))
    q = len(model.exogenous)
    if phi.shape != (q, q):
        if q == 0 and phi.size <= 1:
            phi = np.zeros((0, 0))
        else:
            raise ModelError(f"exogenous covariance must be {q}x{q}")
    v_eta = gam @ phi @ gam.T + np.diag(psi)
    syy = lam @ v_eta @ lam.T + np.diag(th)
    syx = lam @ gam @ phi
    return np.block([[phi, syx.T], [syx, syy]])


# discrepancy -----------------------------------------------------------------


def _chol_logdet(m, what):
    try:
        c = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        _, piv = lu_det(m)
        raise NotPositiveDefiniteError(
            f"{what} matrix is not positive definite (smallest LU pivot {piv:.3g})"
        ) from None
    return c, 2.0 * np.sum(np.log(np.diag(c)))


def fml(sample, implied) -> float:
    """ML discrepancy ln|Sigma| + tr(S Sigma^-1) - ln|S| - p."""
    s = np.atleast_2d(np.asarray(sample, dtype=float))
    sig = np.atleast_2d(np.asarray(implied, dtype=float))
    if s.shape != sig.shape:
        raise ModelError(f"sample {s.shape} and implied {sig.shape} differ in shape")
    _, ld_s = _chol_logdet(s, "sample")
    c, ld_sig = _chol_logdet(sig, "implied")
    inv_c = np.linalg.solve(c, np.eye(len(c)))
    tr = np.sum((inv_c @ s) * inv_c)
    return max(0.0, ld_sig + tr - ld_s - s.shape[0])


def fml_gradient_matrix(sample, implied) -> np.ndarray:
    """d fml / d Sigma (symmetric): Sigma^-1 (Sigma - S) Sigma^-1."""
    inv = np.linalg.inv(implied)
    return inv @ (implied - sample) @ inv


def fml_gradient(model: PathModel, values, sample, exo_cov) -> np.ndarray:
    """Analytic gradient of fml with respect to the natural-scale free parameters."""
    lam, gam, psi, th = unpack(model, values)
    phi = np.atleast_2d(np.asarray(exo_cov, dtype=float)).reshape(len(model.exogenous), -1)
    sig = implied_covariance(model, values, phi)
    g = fml_gradient_matrix(sample, sig)
    q = len(model.exogenous)
    gyy = g[q:, q:]
    gyx = g[q:, :q]
    v_eta = gam @ phi @ gam.T + np.diag(psi)
    d_lam = 2.0 * (gyy @ lam @ v_eta + gyx @ phi @ gam.T)
    h = lam.T @ gyy @ lam
    d_gam = 2.0 * (h @ gam @ phi + lam.T @ gyx @ phi)
    d_psi = np.diag(h)
    d_th = np.diag(gyy)
    return np.concatenate(
        [
            d_lam[model.loadings_free],
            d_gam[model.gamma_free],
            d_psi[model.psi_free],
            d_th[model.theta_free],
        ]
    )


# fitting ---------------------------------------------------------------------


def default_starts(model: PathModel, sample_cov) -> np.ndarray:
    """Loadings 1, paths 0, variances at half the matching sample variance."""
    q = len(model.exogenous)
    var_y = np.diag(sample_cov)[q:]
    lam = np.where(model.loadings_free, 1.0, model.loadings)
    gam = np.where(model.gamma_free, 0.0, model.gamma)
    psi = np.empty(len(model.latents))
    for j in range(len(model.latents)):
        ref = np.flatnonzero(~model.loadings_free[:, j] & (model.loadings[:, j] != 0))
        if ref.size == 0:
            ref = np.flatnonzero(model.loadings_free[:, j])
        psi[j] = 0.5 * (var_y[ref[0]] if ref.size else 1.0)
    th = 0.5 * var_y
    return np.concatenate(
        [lam[model.loadings_free], gam[model.gamma_free], psi[model.psi_free], th[model.theta_free]]
    )


def fit_ml(
    model: PathModel,
    sample: PooledMoments,
    n: int | None = None,
    start=None,
    use_model_starts: bool = False,
    maxiter: int = 500,
    standard_errors: bool = True,
    gtol: float = 1e-9,
    ftol: float = 1e-12,
) -> FitReport:
    """Fit ``model`` to ``sample`` by minimising fml with BFGS.

    Variances are optimised on the log scale. Standard errors come from the
    inverse of ``(n - 1) / 2`` times a finite-difference Hessian of fml in
    the natural parameterisation.

    ``gtol`` applies to the natural-scale gradient. Near-zero error
    variances make the surface very flat, and looser tolerances leave
    standardized estimates dependent on which loading sets the metric.
    """
    model.check_identified()
    n = sample.n_total if n is None else int(n)
    try:
        s_mom = sample.subset(model.observed)
    except ValueError:
        raise ModelError(f"sample lacks some of {model.observed}") from None
    s = s_mom.covariance
    q = len(model.exogenous)
    phi = s[:q, :q]
    _chol_logdet(s, "sample")

    is_var = _variance_slots(model)
    if start is not None:
        x0 = np.asarray(start, dtype=float)
    elif use_model_starts:
        lam, gam, psi, th = model.loadings, model.gamma, model.psi, model.theta
        x0 = np.concatenate(
            [lam[model.loadings_free], gam[model.gamma_free], psi[model.psi_free], th[model.theta_free]]
        )
    else:
        x0 = default_starts(model, s)
    if np.any(x0[is_var] <= 0):
        raise ModelError("variance starting values must be positive")

    def to_nat(z):
        v = z.copy()
        v[is_var] = np.exp(z[is_var])
        return v

    def obj(z):
        return fml(s, implied_covariance(model, to_nat(z), phi))

    def grad(z):
        v = to_nat(z)
        gr = fml_gradient(model, v, s, phi)
        gr[is_var] *= v[is_var]
        return gr

    z0 = x0.copy()
    z0[is_var] = np.log(x0[is_var])
    res = bfgs(obj, z0, grad, ftol=ftol, gtol=gtol, maxiter=maxiter, stop_grad=lambda z, g: _natural_grad(z, g, is_var))
    if not res.converged:
        raise ConvergenceError(
            f"ML fit did not converge after {res.iterations} iterations "
            f"(gradient inf-norm {res.grad_norm:.3g}): {res.message}"
        )
    est = to_nat(res.x)
    sig = implied_covariance(model, est, phi)
    f_min = fml(s, sig)
    notes = []
    se = None
    if standard_errors and est.size:
        se, note = _standard_errors(model, est, s, phi, n)
        if note:
            notes.append(note)
    chi2 = (n - 1) * f_min
    df = model.df
    p = chi2_upper_tail(chi2, df) if df > 0 else float("nan")
    report = FitReport(
        model, ParamVector(tuple(model.param_names()), est), se, f_min, chi2, df, p, n,
        sig, s, phi, res.iterations, res.grad_norm, tuple(notes),
    )
    return replace(report, standardized=standardize(report))


def _natural_grad(z, g, is_var):
    out = g.copy()
    out[is_var] = g[is_var] / np.exp(z[is_var])
    return out


def _standard_errors(model, est, s, phi, n):
    k = est.size
    hess = np.empty((k, k))
    for i in range(k):
        h = 1e-5 * max(1.0, abs(est[i]))
        up = est.copy()
        dn = est.copy()
        up[i] += h
        dn[i] -= h
        try:
            hess[:, i] = (fml_gradient(model, up, s, phi) - fml_gradient(model, dn, s, phi)) / (2 * h)
        except np.linalg.LinAlgError:
            return None, "Hessian could not be evaluated near the optimum; standard errors omitted"
    hess = 0.5 * (hess + hess.T)
    info = 0.5 * (n - 1) * hess
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        return None, "Hessian is not positive definite at the optimum; standard errors omitted"
    return np.sqrt(np.diag(np.linalg.inv(info))), None


def standardize(report: FitReport) -> Standardized:
    lam, gam, psi, th = report.matrices()
    phi = report.exogenous_covariance
    v_eta = np.diag(gam @ phi @ gam.T + np.diag(psi))
    var_y = np.diag(report.implied_covariance)[len(report.model.exogenous):]
    var_x = np.diag(phi)
    if np.any(v_eta <= 0) or np.any(var_y <= 0) or np.any(var_x <= 0):
        raise ModelError("zero implied variance; cannot standardise")
    sd_eta = np.sqrt(v_eta)
    lam_std = lam * sd_eta[None, :] / np.sqrt(var_y)[:, None]
    gam_std = gam * np.sqrt(var_x)[None, :] / sd_eta[:, None]
    resid = psi / v_eta
    return Standardized(gam_std, lam_std, resid, 1.0 - resid)


def sem_summary(report: FitReport) -> dict:
    """Headline numbers for a single-latent MIMIC fit."""
    st = report.standardized
    lam, gam, psi, _ = report.matrices()
    return {
        "gamma": gam[0].tolist(),
        "gamma_std": st.gamma_std[0].tolist(),
        "residual_std": float(st.residual_variance_std[0]),
        "r2_latent": float(st.r2_latent[0]),
        "loadings": lam[:, 0].tolist(),
        "loadings_std": st.loadings_std[:, 0].tolist(),
        "min_loading_std": float(np.min(st.loadings_std[:, 0])),
        "chi_square": report.chi_square,
        "df": report.df,
        "p": None if math.isnan(report.p) else report.p,
    }
