"""Small BFGS minimiser used by the covariance-structure fits."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ConvergenceError(ArithmeticError):
    pass


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    message: str

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def numeric_gradient(fun: Callable, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences with a step relative to |x|."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (fun(xp) - fun(xm)) / (2 * step)
    return g


def bfgs(
    fun: Callable[[np.ndarray], float],
    x0,
    grad: Callable[[np.ndarray], np.ndarray] | None = None,
    ftol: float = 1e-9,
    gtol: float = 1e-6,
    maxiter: int = 500,
    stop_grad: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    stall_gtol: float = 1e-6,
) -> OptimizeResult:
    """Minimise ``fun`` by BFGS with a backtracking Armijo line search.

    Stops when the last accepted step changed ``fun`` by less than ``ftol``
    *and* the gradient's infinity norm is below ``gtol``. ``fun`` may return
    ``inf`` (or raise ``FloatingPointError``/``LinAlgError``) to reject a
    trial point; the line search then shrinks the step.

    ``stop_grad(x, g)`` maps the gradient to the one used in the stopping
    test, e.g. back to natural scale when ``x`` holds log variances. When
    no step decreases ``fun`` any more, a gradient below ``stall_gtol``
    counts as converged.
    """
    if grad is None:
        grad = lambda z: numeric_gradient(fun, z)  # noqa: E731
    if stop_grad is None:
        stop_grad = lambda z, gz: gz  # noqa: E731

    def gnorm(z, gz):
        return float(np.max(np.abs(stop_grad(z, gz))))

    def safe(z):
        try:
            v = fun(z)
        except (FloatingPointError, np.linalg.LinAlgError, ValueError):
            return np.inf
        return v if np.isfinite(v) else np.inf

    x = np.array(x0, dtype=float)
    n = x.size
    f = safe(x)
    if not np.isfinite(f):
        raise ConvergenceError("objective is not finite at the starting values")
    g = grad(x)
    if n == 0:
        return OptimizeResult(x, f, g, 0, True, "no free parameters")
    hinv = np.eye(n)
    scaled = False
    df = np.inf
    for it in range(1, maxiter + 1):
        if abs(df) < ftol and gnorm(x, g) < gtol:
            return OptimizeResult(x, f, g, it - 1, True, "converged")
        d = -hinv @ g
        slope = g @ d
        if slope >= 0:
            hinv = np.eye(n)
            d = -g
            slope = g @ d
        step = 1.0
        while True:
            x_new = x + step * d
            f_new = safe(x_new)
            if f_new <= f + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-16:
                break
        if not f_new < f:
            # no decrease along d: accept a stationary point at the looser
            # tolerance, otherwise restart once from steepest descent
            if gnorm(x, g) < stall_gtol:
                return OptimizeResult(x, f, g, it, True, "converged (no further decrease)")
            if np.allclose(hinv, np.eye(n)):
                return OptimizeResult(x, f, g, it, False, "line search failed")
            hinv = np.eye(n)
            scaled = False
            continue
        g_new = grad(x_new)
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                hinv = np.eye(n) * (sy / (y @ y))
                scaled = True
            rho = 1.0 / sy
            v = np.eye(n) - rho * np.outer(s, y)
            hinv = v @ hinv @ v.T + rho * np.outer(s, s)
        df = f_new - f
        x, f, g = x_new, f_new, g_new
    ok = abs(df) < ftol and gnorm(x, g) < gtol
    return OptimizeResult(x, f, g, maxiter, ok, "converged" if ok else "maximum iterations reached")
