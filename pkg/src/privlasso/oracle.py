"""Reference solvers for the tilted LASSO ``0.5||y - Fx||^2 + lam||x||_1 + eta.x``.

Two independent paths: accelerated proximal gradient with monotone restart,
and cyclic coordinate descent.  Both stop on the KKT residual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .core import NoiseRealization, ProblemInstance
from .kernels import soft_mean

# Iterates beyond this norm mean the tilted objective is unbounded below.
UNBOUNDED_NORM = 1e12
# Iteration count after which a slow solve triggers the recession-direction test.
UNBOUNDED_CHECK_AFTER = 2000


class OracleMaxIterError(RuntimeError):
    """Iteration budget exhausted; carries the best iterate seen."""

    def __init__(self, msg, x_best, residual, objective):
        super().__init__(msg)
        self.x_best = x_best
        self.residual = residual
        self.objective = objective


class UnboundedObjectiveError(ArithmeticError):
    """The tilted objective has no minimiser (its dual is infeasible)."""


@dataclass(frozen=True)
class OracleResult:
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int


def _eta(eta, n):
    if eta is None:
        return np.zeros(n)
    arr = np.asarray(eta.eta if isinstance(eta, NoiseRealization) else eta, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"eta has shape {arr.shape}, expected ({n},)")
    return arr


def _unpack(instance, eta):
    F = np.asarray(instance.F)
    return F, np.asarray(instance.y), _eta(eta, F.shape[1])


def objective_value(instance: ProblemInstance, eta, lam: float, x) -> float:
    F, y, e = _unpack(instance, eta)
    x = np.asarray(x, dtype=float)
    if x.shape != (F.shape[1],):
        raise ValueError("x has the wrong length")
    r = y - F @ x
    return float(0.5 * r @ r + lam * np.sum(np.abs(x)) + e @ x)


def kkt_residual_from_grad(grad, x, lam: float) -> float:
    """Largest subgradient violation given ``grad = F^T(Fx - y) + eta``."""
    active = x != 0
    viol = np.where(active, np.abs(grad + lam * np.sign(x)), np.maximum(np.abs(grad) - lam, 0.0))
    return float(np.max(viol, initial=0.0))


def kkt_residual(instance: ProblemInstance, eta, lam: float, x) -> float:
    F, y, e = _unpack(instance, eta)
    x = np.asarray(x, dtype=float)
    return kkt_residual_from_grad(F.T @ (F @ x - y) + e, x, lam)


def recession_certificate(F, eta, lam: float, tol: float = 1e-9):
    """A direction ``d`` with ``F d = 0`` and ``lam|d|_1 + eta.d < 0``, or None.

    Such a direction exists iff the tilted objective is unbounded below.
    Solved as a linear program over ``d = d+ - d-`` with ``|d|_inf <= 1``.
    """
    F = np.asarray(F, dtype=float)
    eta = np.asarray(eta, dtype=float)
    m, n = F.shape
    if m >= n and np.linalg.matrix_rank(F) == n:
        return None
    c = np.concatenate([lam + eta, lam - eta])
    res = linprog(c, A_eq=np.hstack([F, -F]), b_eq=np.zeros(m), bounds=(0, 1), method="highs")
    if res.status != 0 or res.fun >= -tol:
        return None
    return res.x[:n] - res.x[n:]


def lipschitz_constant(F, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0) -> float:
    """Largest eigenvalue of ``F^T F`` by power iteration."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(F.shape[1])
    u /= np.linalg.norm(u)
    val = 0.0
    for _ in range(max_iter):
        g = F.T @ (F @ u)
        new = float(np.linalg.norm(g))
        if new == 0.0:
            return 0.0
        u = g / new
        if abs(new - val) <= tol * new:
            return new
        val = new
    return val


def oracle_solve(instance: ProblemInstance, eta, lam: float, tol: float = 1e-10,
                 max_iter: int = 200_000, x_init=None, callback=None) -> OracleResult:
    """FISTA with function-value restart; stops when the KKT residual < tol.

    ``callback(it, x, f)``, if given, sees every accepted iterate.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    if not lam > 0:
        raise ValueError("lam must be > 0")
    F, y, e = _unpack(instance, eta)
    n = F.shape[1]
    # Power iteration approaches from below; a small margin keeps 1/L safe.
    L = lipschitz_constant(F) * (1 + 1e-6)
    if L == 0.0:
        L = 1.0

    def obj(x, r):
        return 0.5 * r @ r + lam * np.sum(np.abs(x)) + e @ x

    x = np.zeros(n) if x_init is None else np.array(x_init, dtype=float)
    r = y - F @ x
    f = obj(x, r)
    z, t = x.copy(), 1.0
    restarted = False
    best = (kkt_residual_from_grad(-F.T @ r + e, x, lam), x.copy(), f)
    if best[0] < tol:
        return OracleResult(x, float(f), best[0], 0)

    for it in range(1, max_iter + 1):
        grad_z = F.T @ (F @ z - y) + e
        x_new = soft_mean(1.0 / L, z - grad_z / L, lam)
        r_new = y - F @ x_new
        f_new = obj(x_new, r_new)
        if f_new > f and not restarted:
            # Momentum overshoot: restart from the current iterate.  A plain
            # proximal step from x is then accepted even if rounding makes
            # it look uphill.
            z, t, restarted = x.copy(), 1.0, True
            continue
        restarted = False
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        z = x_new + ((t - 1) / t_new) * (x_new - x)
        x, r, f, t = x_new, r_new, f_new, t_new
        if callback is not None:
            callback(it, x, float(f))
        if not math.isfinite(f) or np.max(np.abs(x)) > UNBOUNDED_NORM:
            raise UnboundedObjectiveError("iterates ran away; the tilted objective is unbounded")
        res = kkt_residual_from_grad(-F.T @ r + e, x, lam)
        if res < best[0]:
            best = (res, x.copy(), f)
        if res < tol:
            return OracleResult(x, float(f), res, it)
        if it == UNBOUNDED_CHECK_AFTER and recession_certificate(F, e, lam) is not None:
            raise UnboundedObjectiveError("the tilted objective is unbounded below")
    raise OracleMaxIterError(
        f"no KKT residual below {tol:g} after {max_iter} iterations (best {best[0]:.3g})",
        x_best=best[1], residual=best[0], objective=float(best[2]))


def coordinate_descent(instance: ProblemInstance, eta, lam: float, tol: float = 1e-10,
                       max_sweeps: int = 100_000) -> OracleResult:
    """Cyclic coordinate descent with exact coordinate minimisation."""
    if not tol > 0:
        raise ValueError("tol must be > 0")
    F, y, e = _unpack(instance, eta)
    n = F.shape[1]
    col_sq = np.einsum("ij,ij->j", F, F)
    x = np.zeros(n)
    r = y.copy()
    res = math.inf
    for sweep in range(1, max_sweeps + 1):
        for i in range(n):
            c = col_sq[i]
            if c == 0:
                continue
            fi = F[:, i]
            b = fi @ r + c * x[i] - e[i]
            new = math.copysign(max(abs(b) - lam, 0.0), b) / c
            if new != x[i]:
                r -= fi * (new - x[i])
                x[i] = new
        if np.max(np.abs(x)) > UNBOUNDED_NORM:
            raise UnboundedObjectiveError("iterates ran away; the tilted objective is unbounded")
        res = kkt_residual_from_grad(-F.T @ r + e, x, lam)
        if sweep == UNBOUNDED_CHECK_AFTER // 10 and recession_certificate(F, e, lam) is not None:
            raise UnboundedObjectiveError("the tilted objective is unbounded below")
        if res < tol:
            f = 0.5 * r @ r + lam * np.sum(np.abs(x)) + e @ x
            return OracleResult(x, float(f), res, sweep)
    f = 0.5 * r @ r + lam * np.sum(np.abs(x)) + e @ x
    raise OracleMaxIterError(f"coordinate descent stalled at residual {res:.3g}",
                             x_best=x.copy(), residual=res, objective=float(f))
