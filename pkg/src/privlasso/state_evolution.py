"""State evolution for AMP on the heterogeneous, perturbed LASSO.

Notation: ``w = v**2`` is the column energy of a coordinate with scale ``v``.
With order parameters (E, V) the decoupled channel for that coordinate reads

    Sigma_v = (1 + V) / (alpha w),  sigma_z^2 = E / (alpha w),
    x_hat   = soft(x0 + sigma_z z - eta Sigma_v, lam Sigma_v),

and folding z and eta together gives u | x0 ~ N(x0, s^2) with
``s^2 = sigma_z^2 + Sigma_v^2 sigma_eta^2(v)``.  The x0 average is done in
closed form for both the atom at zero and the standard Gaussian slab, so only
the expectation over v needs a numerical rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .core import Explicit, HyperParams, PerturbationScheme, Scheme, check_params
from .instance import substream
from .integrators import IntegrationError, MonteCarlo, Quadrature, RunningMoments, scale_nodes
from .kernels import soft_mean

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Iterates beyond these are treated as a run-away recursion.
DIVERGED_V = 1e8
DIVERGED_E = 1e12

# Substream key reserved for integrator draws, disjoint from instance streams.
MC_STREAM = 7


def _phi(t):
    return _INV_SQRT_2PI * np.exp(-0.5 * t * t)


@dataclass(frozen=True)
class SeState:
    E: float
    V: float
    iteration: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.E) and self.E > 0):
            raise ValueError(f"E must be finite and > 0, got {self.E}")
        if not (math.isfinite(self.V) and self.V >= 0):
            raise ValueError(f"V must be finite and >= 0, got {self.V}")


@dataclass(frozen=True)
class SeSolution:
    E_star: float
    V_star: float
    rho_hat_se: float
    stable: bool
    converged: bool
    iterations: int
    integrator: str
    status: str = "converged"
    E_stderr: float = 0.0
    V_stderr: float = 0.0


@dataclass(frozen=True)
class SeMoments:
    """One evaluation of the SE right-hand sides with error estimates."""

    E: float
    V: float
    rho_hat: float
    E_err: float
    V_err: float
    rho_err: float


# ---------------------------------------------------------------- closed forms

def channel_moments(x0, s, tau):
    """E[(x0 - soft(u, tau))^2] and P(|u| > tau) for u ~ N(x0, s^2)."""
    x0, s, tau = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x0, s, tau)))
    a = (tau - x0) / s
    b = (-tau - x0) / s
    qa, pb = ndtr(-a), ndtr(b)
    upper = tau**2 * qa - 2 * tau * s * _phi(a) + s**2 * (qa + a * _phi(a))
    lower = tau**2 * pb - 2 * tau * s * _phi(b) + s**2 * (pb - b * _phi(b))
    inside = x0**2 * (ndtr(a) - pb)
    return upper + lower + inside, qa + pb


def atom_moments(s, tau):
    """Squared error and activity for x0 = 0."""
    t = tau / s
    q = ndtr(-t)
    mse = 2.0 * ((s * s + tau * tau) * q - tau * s * _phi(t))
    return mse, 2.0 * q


def slab_moments(s, tau):
    """Squared error and activity for x0 ~ N(0, 1), averaged over x0."""
    s2 = s * s
    big2 = 1.0 + s2
    big = np.sqrt(big2)
    k = 1.0 / big2
    a = k - 1.0
    t = tau / big
    q = ndtr(-t)
    ph = _phi(t)
    inner = big2 * (1.0 - 2.0 * q - 2.0 * t * ph)
    tail = a * a * big2 * (q + t * ph) + 2.0 * a * tau * big * ph + tau * tau * q
    mse = s2 / big2 + k * k * inner + 2.0 * tail
    return mse, 2.0 * q


def population_second_moment(model) -> float:
    return float(model.second_moment())


def _quad_terms(E, V, p: HyperParams, scheme, v, pv, ev2):
    w = v * v
    sig = (1.0 + V) / (p.alpha * w)
    s = np.sqrt(E / (p.alpha * w) + sig * sig * scheme.noise_var(v, ev2))
    tau = p.lam * sig
    m0, a0 = atom_moments(s, tau)
    m1, a1 = slab_moments(s, tau)
    mse = (1 - p.rho) * m0 + p.rho * m1
    act = (1 - p.rho) * a0 + p.rho * a1
    e_new = float(np.sum(pv * w * mse)) + p.sigma_xi**2
    v_new = float(np.sum(pv * w * sig * act))
    rho = float(np.sum(pv * act))
    return e_new, v_new, rho


def _quadrature_moments(E, V, p, model, scheme, q: Quadrature) -> SeMoments:
    ev2 = population_second_moment(model)
    v, pv = scale_nodes(model, q.n_v)
    hi = _quad_terms(E, V, p, scheme, v, pv, ev2)
    if isinstance(model, Explicit) or len(v) == 1:
        errs = (0.0, 0.0, 0.0)
    else:
        v_lo, pv_lo = scale_nodes(model, q.low_orders()[0])
        lo = _quad_terms(E, V, p, scheme, v_lo, pv_lo, ev2)
        errs = tuple(abs(h - l) for h, l in zip(hi, lo))
    for val, err, name in zip(hi, errs, ("E", "V", "rho_hat")):
        if not math.isfinite(val) or err > q.rtol * abs(val) + q.atol:
            raise IntegrationError(
                f"{name}: estimate {val:.6g} has error {err:.3g} above tolerance")
    return SeMoments(hi[0], hi[1], hi[2], *errs)


def _mc_draws(model, p: HyperParams, mc: MonteCarlo, k: int, size: int):
    """Chunk ``k`` of (v, x0, z, eta_std); identical on every call."""
    rng = substream(mc.seed, MC_STREAM, k)
    v = model.sample(rng, size)
    active = rng.random(size) < p.rho
    x0 = np.where(active, rng.standard_normal(size), 0.0)
    z = rng.standard_normal(size)
    eta_std = rng.standard_normal(size)
    return v, x0, z, eta_std


def _mc_moments(E, V, p, model, scheme, mc: MonteCarlo) -> SeMoments:
    ev2 = population_second_moment(model)
    acc = [RunningMoments() for _ in range(3)]
    for k, size in mc.chunks():
        v, x0, z, eta_std = _mc_draws(model, p, mc, k, size)
        w = v * v
        sig = (1.0 + V) / (p.alpha * w)
        eta = eta_std * np.sqrt(scheme.noise_var(v, ev2))
        u = x0 + np.sqrt(E / (p.alpha * w)) * z - eta * sig
        x_hat = soft_mean(sig, u, p.lam)
        on = (np.abs(u) > p.lam * sig).astype(float)
        acc[0].add(w * (x0 - x_hat) ** 2)
        acc[1].add(w * sig * on)
        acc[2].add(on)
    e, vv, r = (a.mean for a in acc)
    return SeMoments(e + p.sigma_xi**2, vv, r, acc[0].stderr, acc[1].stderr, acc[2].stderr)


def se_moments(E, V, p: HyperParams, model, scheme: PerturbationScheme,
               integrator=None) -> SeMoments:
    """Evaluate the SE right-hand sides at (E, V)."""
    integrator = Quadrature() if integrator is None else integrator
    if isinstance(integrator, Quadrature):
        return _quadrature_moments(E, V, p, model, scheme, integrator)
    if isinstance(integrator, MonteCarlo):
        return _mc_moments(E, V, p, model, scheme, integrator)
    raise TypeError(f"unsupported integrator {integrator!r}")


def se_update(state: SeState, p: HyperParams, model, scheme: PerturbationScheme,
              integrator=None) -> SeState:
    """One Jacobi step: both right-hand sides use the incoming (E, V)."""
    m = se_moments(state.E, state.V, p, model, scheme, integrator)
    return SeState(m.E, m.V, state.iteration + 1)


def initial_state(p: HyperParams, model) -> SeState:
    """Order parameters of the all-zero estimate."""
    return SeState(p.rho * population_second_moment(model) + p.sigma_xi**2, p.rho / p.alpha)


def se_fixed_point(p: HyperParams, model, scheme: PerturbationScheme,
                   integrator=None, init: SeState | None = None,
                   max_iter: int = 5000, tol: float = 1e-10) -> SeSolution:
    check_params(p, allow_null_signal=True)
    if max_iter < 1 or tol <= 0:
        raise ValueError("max_iter must be >= 1 and tol > 0")
    integrator = Quadrature() if integrator is None else integrator
    init = initial_state(p, model) if init is None else init
    E, V = init.E, init.V

    status = "max_iter"
    m = se_moments(E, V, p, model, scheme, integrator)
    it = 1
    while True:
        done = abs(m.E - E) / E < tol and abs(m.V - V) / (1 + V) < tol
        E, V = m.E, m.V
        if done:
            status = "converged"
            break
        if not (math.isfinite(E) and math.isfinite(V)) or V > DIVERGED_V or E > DIVERGED_E:
            status = "diverged"
            break
        if it >= max_iter:
            break
        m = se_moments(E, V, p, model, scheme, integrator)
        it += 1
    rho = float(min(max(m.rho_hat, 0.0), 1.0))
    return SeSolution(
        E_star=E, V_star=V, rho_hat_se=rho, stable=rho < p.alpha,
        converged=status == "converged", iterations=it,
        integrator=integrator.describe(), status=status,
        E_stderr=m.E_err, V_stderr=m.V_err,
    )


def decoupled_sample(p: HyperParams, v, x0, z, eta, E, V):
    """Scalar channel output for given (v, x0, z, eta) at order parameters (E, V)."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0) or E <= 0 or V < 0:
        raise ValueError("need v > 0, E > 0, V >= 0")
    w = v * v
    sig = (1.0 + V) / (p.alpha * w)
    out = soft_mean(sig, x0 + np.sqrt(E / (p.alpha * w)) * z - eta * sig, p.lam)
    return float(out) if np.ndim(out) == 0 else out


def stability_margin(sol: SeSolution, p: HyperParams) -> float:
    """alpha - rho_hat; positive means the fixed point is predicted stable."""
    return p.alpha - sol.rho_hat_se
