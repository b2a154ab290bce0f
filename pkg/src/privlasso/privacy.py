"""Asymptotic component-wise on-average KL divergence.

For a converged (E*, V*) the metric is

    alpha^-2 E* E_{v, x0, z}[ R_v(m_hat) / v^2 ],  m_hat = x0 + sqrt(E*/(alpha w)) z,

with ``R_v`` the Fisher information of the thresholded, perturbed output
(see :func:`privlasso.kernels.big_r`).  ``R_v`` varies on the scale
``s = Sigma sigma_eta`` around ``|m_hat| = lam Sigma``, which can be far
narrower than the spread of ``m_hat``, so the m_hat integral uses composite
Gauss-Legendre panels that put a dedicated panel on each threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Explicit, HyperParams, PerturbationScheme, Scheme
from .instance import substream
from .integrators import IntegrationError, MonteCarlo, Quadrature, RunningMoments, legendre_panel, scale_nodes
from .kernels import fisher_terms, r_hat_d1
from .state_evolution import MC_STREAM, SeSolution, se_fixed_point

DIVERGENT = math.inf
D1_NEGLIGIBLE = 1e-150
# Half-width of the threshold panel and the truncation point, in units of
# the relevant standard deviation.
PANEL_HALF_WIDTH = 8.0
TRUNCATE_AT = 12.0


def _cell_values(m, sigma_big, lam, sigma_eta):
    """R_v on a grid, applying the singular-cell policy."""
    t1, d2, t3, singular = fisher_terms(m, sigma_big, lam, sigma_eta)
    if np.any(singular):
        tiny = np.abs(r_hat_d1(m, sigma_big, lam, sigma_eta)) < D1_NEGLIGIBLE
        t1 = np.where(singular & tiny, 0.0, t1)
        bad = singular & ~np.isfinite(t1)
        if np.any(bad):
            raise IntegrationError("1 - r_hat vanished where the first derivative does not")
    return t1 + d2 + t3


def _gauss_expect_even(spread, sigma_big, sigma_eta, lam, n_m):
    """E[R(m)] for m ~ N(0, spread^2), one row per scale node.

    R is even in m, so integrate over [0, U] and double.  Panels:
    [0, c - 8s], [c - 8s, c + 8s], [c + 8s, U], clipped to [0, U].
    """
    c = lam * sigma_big
    s = sigma_big * sigma_eta
    upper = TRUNCATE_AT * spread
    cuts = [np.zeros_like(c),
            np.clip(c - PANEL_HALF_WIDTH * s, 0.0, upper),
            np.clip(c + PANEL_HALF_WIDTH * s, 0.0, upper),
            upper]
    total = np.zeros_like(c)
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        x, wx = legendre_panel(lo, hi, n_m)
        dens = np.exp(-0.5 * (x / spread[:, None]) ** 2) / (math.sqrt(2 * math.pi) * spread[:, None])
        vals = _cell_values(x, sigma_big[:, None], lam, sigma_eta[:, None])
        total += 2.0 * np.sum(wx * dens * vals, axis=1)
    return total


def _quad_value(sol, p, model, scheme, v, pv, n_m, ev2):
    w = v * v
    sig = (1.0 + sol.V_star) / (p.alpha * w)
    sigma_eta = np.sqrt(scheme.noise_var(v, ev2))
    sz2 = sol.E_star / (p.alpha * w)
    # Atom x0 = 0 has m_hat ~ N(0, sz2); the slab has N(0, 1 + sz2).  The
    # atom contribution is skipped when rho = 1.
    inner = p.rho * _gauss_expect_even(np.sqrt(1.0 + sz2), sig, sigma_eta, p.lam, n_m)
    if p.rho < 1:
        inner += (1 - p.rho) * _gauss_expect_even(np.sqrt(sz2), sig, sigma_eta, p.lam, n_m)
    return sol.E_star / p.alpha**2 * float(np.sum(pv * inner / w))


def _quadrature_kl(sol, p, model, scheme, q: Quadrature):
    ev2 = float(model.second_moment())
    v, pv = scale_nodes(model, q.n_v)
    hi = _quad_value(sol, p, model, scheme, v, pv, q.n_m, ev2)
    n_v_lo, n_m_lo = q.low_orders()
    if not (isinstance(model, Explicit) or len(v) == 1):
        v, pv = scale_nodes(model, n_v_lo)
    lo = _quad_value(sol, p, model, scheme, v, pv, n_m_lo, ev2)
    err = abs(hi - lo)
    if not math.isfinite(hi) or err > q.rtol * abs(hi) + q.atol:
        raise IntegrationError(f"cwOnAveKL estimate {hi:.6g} has error {err:.3g} above tolerance")
    return hi, err


def _mc_kl(sol, p, model, scheme, mc: MonteCarlo):
    ev2 = float(model.second_moment())
    acc = RunningMoments()
    for k, size in mc.chunks():
        rng = substream(mc.seed, MC_STREAM + 1, k)
        v = model.sample(rng, size)
        x0 = np.where(rng.random(size) < p.rho, rng.standard_normal(size), 0.0)
        z = rng.standard_normal(size)
        w = v * v
        sig = (1.0 + sol.V_star) / (p.alpha * w)
        m = x0 + np.sqrt(sol.E_star / (p.alpha * w)) * z
        acc.add(_cell_values(m, sig, p.lam, np.sqrt(scheme.noise_var(v, ev2))) / w)
    scale = sol.E_star / p.alpha**2
    return scale * acc.mean, scale * acc.stderr


def cw_on_ave_kl_with_error(sol: SeSolution, p: HyperParams, model, scheme: PerturbationScheme,
                            integrator=None) -> tuple[float, float]:
    """Metric value and its error estimate (standard error for Monte Carlo)."""
    if scheme.sigma_eta_bar_sq == 0:
        return DIVERGENT, 0.0
    if not sol.converged:
        raise ValueError("cwOnAveKL needs a converged state-evolution solution")
    integrator = Quadrature() if integrator is None else integrator
    if isinstance(integrator, Quadrature):
        return _quadrature_kl(sol, p, model, scheme, integrator)
    if isinstance(integrator, MonteCarlo):
        return _mc_kl(sol, p, model, scheme, integrator)
    raise TypeError(f"unsupported integrator {integrator!r}")


def cw_on_ave_kl(sol: SeSolution, p: HyperParams, model, scheme: PerturbationScheme,
                 integrator=None) -> float:
    """Component-wise on-average KL; ``math.inf`` marks the noiseless divergence."""
    return cw_on_ave_kl_with_error(sol, p, model, scheme, integrator)[0]


@dataclass(frozen=True)
class TradeoffPoint:
    sigma_eta_bar: float
    E_star: float
    cw_kl: float
    rho_hat_se: float
    converged: bool
    stable: bool
    status: str


def tradeoff_curve(p: HyperParams, model, variant, sigma_eta_grid: Sequence[float],
                   integrator=None, se_kwargs: dict | None = None) -> list[TradeoffPoint]:
    """Solve SE and evaluate the metric along a sorted noise grid.

    Cells whose SE does not converge, or whose expectations cannot be
    integrated to tolerance, are kept with ``converged=False`` and NaN values.
    """
    grid = [float(g) for g in sigma_eta_grid]
    if any(g < 0 for g in grid) or grid != sorted(grid):
        raise ValueError("sigma_eta_grid must be nonnegative and sorted")
    variant = Scheme(variant)
    out = []
    for g in grid:
        scheme = PerturbationScheme(variant, g * g)
        try:
            sol = se_fixed_point(p, model, scheme, integrator, **(se_kwargs or {}))
        except IntegrationError:
            out.append(TradeoffPoint(g, math.nan, math.nan, math.nan, False, False, "integration_error"))
            continue
        if not sol.converged:
            out.append(TradeoffPoint(g, sol.E_star, math.nan, sol.rho_hat_se, False, sol.stable, sol.status))
            continue
        try:
            kl = cw_on_ave_kl(sol, p, model, scheme, integrator)
            status = sol.status
        except IntegrationError:
            kl, status = math.nan, "integration_error"
        out.append(TradeoffPoint(g, sol.E_star, kl, sol.rho_hat_se, status == "converged",
                                 sol.stable, status))
    return out
