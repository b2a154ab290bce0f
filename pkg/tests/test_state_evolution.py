import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from privlasso.amp import AmpConfig, amp_run, generalization_error
from privlasso.core import (ConstantOne, Explicit, HyperParams, LogNormal, PerturbationScheme,
                            ProblemInstance, UniformUnit)
from privlasso.instance import generate_instance
from privlasso.integrators import IntegrationError, MonteCarlo, Quadrature
from privlasso.kernels import soft_mean
from privlasso.state_evolution import (SeSolution, SeState, atom_moments, channel_moments,
                                       decoupled_sample, se_fixed_point, se_moments, se_update,
                                       slab_moments, stability_margin)

P = HyperParams(0.5, 0.1, 0.1, 1.0)
GRAM0 = PerturbationScheme("gram", 0.0)


def test_null_signal_fixed_point():
    p = HyperParams(0.5, 0.0, 0.1, 50.0)
    sol = se_fixed_point(p, UniformUnit(), GRAM0)
    assert sol.converged
    assert sol.E_star == pytest.approx(0.01, abs=1e-10)
    assert sol.V_star == 0.0 and sol.rho_hat_se == 0.0 and sol.stable


def _expect_over_signal(f):
    pts = (-1.0, 0.0, 1.0)
    return quad(lambda x: f(x) * norm.pdf(x), -14, 14, points=pts, epsabs=1e-14, epsrel=1e-12, limit=400)[0]


@pytest.mark.parametrize("s, tau", [(0.3, 0.5), (1.0, 0.1), (2.0, 3.0), (0.05, 0.01)])
def test_slab_closed_form_against_integral_over_signal(s, tau):
    ref_m = _expect_over_signal(lambda x: float(channel_moments(x, s, tau)[0]))
    ref_a = _expect_over_signal(lambda x: float(channel_moments(x, s, tau)[1]))
    got_m, got_a = slab_moments(np.float64(s), np.float64(tau))
    assert got_m == pytest.approx(ref_m, rel=1e-10)
    assert got_a == pytest.approx(ref_a, rel=1e-10)


@pytest.mark.parametrize("s, tau", [(0.3, 0.5), (1.0, 0.1), (2.0, 3.0)])
def test_atom_closed_form_matches_channel(s, tau):
    m0, a0 = atom_moments(np.float64(s), np.float64(tau))
    m1, a1 = channel_moments(0.0, s, tau)
    assert m0 == pytest.approx(float(m1), rel=1e-13)
    assert a0 == pytest.approx(float(a1), rel=1e-13)


def test_folded_gaussian_matches_double_integral():
    # u = x0 + sz*z - eta*Sigma with independent z, eta folds to N(x0, sz^2 + Sigma^2 se^2).
    x0, sz, sig, se, lam = 0.7, 0.4, 1.3, 0.3, 0.6
    tau = lam * sig

    def inner(e, f):
        # z-integral at fixed eta, split at the two thresholds of u.
        c = x0 - sig * se * e
        kinks = sorted(((tau - c) / sz, (-tau - c) / sz))
        val = quad(lambda z: f(c + sz * z) * norm.pdf(z), -14, 14, points=kinks,
                   epsabs=1e-14, epsrel=1e-12, limit=400)[0]
        return val * norm.pdf(e)

    sq = lambda u: (x0 - float(soft_mean(sig, u, lam))) ** 2
    on = lambda u: float(abs(u) > tau)
    ref_m = quad(inner, -14, 14, args=(sq,), epsabs=1e-13, epsrel=1e-11, limit=400)[0]
    ref_a = quad(inner, -14, 14, args=(on,), epsabs=1e-13, epsrel=1e-11, limit=400)[0]
    m, a = channel_moments(x0, math.sqrt(sz**2 + sig**2 * se**2), tau)
    assert float(m) == pytest.approx(ref_m, rel=1e-8)
    assert float(a) == pytest.approx(ref_a, rel=1e-8)


def _classical_map(p, E, V):
    """Homogeneous LASSO update by nested adaptive quadrature over (x0, z)."""
    sig = (1 + V) / p.alpha
    sz = math.sqrt(E / p.alpha)
    tau = p.lam * sig

    def z_avg(f, x0):
        kinks = sorted(((tau - x0) / sz, (-tau - x0) / sz))
        return quad(lambda z: f(x0 + sz * z, x0) * norm.pdf(z), -12, 12, points=kinks,
                    epsabs=1e-13, epsrel=1e-11, limit=200)[0]

    sq = lambda u, x0: (x0 - math.copysign(max(abs(u) - tau, 0.0), u)) ** 2
    on = lambda u, x0: float(abs(u) > tau)
    slab = lambda f: quad(lambda x: z_avg(f, x) * norm.pdf(x), -12, 12,
                          epsabs=1e-12, epsrel=1e-10, limit=200)[0]
    mse = (1 - p.rho) * z_avg(sq, 0.0) + p.rho * slab(sq)
    act = (1 - p.rho) * z_avg(on, 0.0) + p.rho * slab(on)
    return mse + p.sigma_xi**2, sig * act


@pytest.mark.parametrize("lam", [0.3, 1.0])
def test_homogeneous_fixed_point_solves_classical_recursion(lam):
    p = HyperParams(0.5, 0.1, 0.1, lam)
    sol = se_fixed_point(p, ConstantOne(), GRAM0)
    E, V = _classical_map(p, sol.E_star, sol.V_star)
    assert sol.E_star == pytest.approx(E, rel=1e-8)
    assert sol.V_star == pytest.approx(V, rel=1e-8)


def _stratified_instance(p, n, seed):
    """Instance whose signal has an empirical law very close to the prior."""
    inst = generate_instance(p, ConstantOne(), n, seed)
    rng = np.random.default_rng(seed)
    k = int(round(p.rho * n))
    x0 = np.zeros(n)
    x0[rng.choice(n, k, replace=False)] = rng.permutation(norm.ppf((np.arange(k) + 0.5) / k))
    y = inst.F @ x0 + p.sigma_xi * rng.standard_normal(inst.M)
    return ProblemInstance(F=inst.F, y=y, x0=x0, v=inst.v, sigma_xi=p.sigma_xi, seed=seed)


@pytest.mark.slow
def test_homogeneous_case_matches_large_amp_run():
    p = HyperParams(0.5, 0.1, 0.1, 1.0)
    sol = se_fixed_point(p, ConstantOne(), GRAM0)
    inst = _stratified_instance(p, 10_000, 0)
    state, _ = amp_run(inst, None, p, AmpConfig(), trace=False)
    assert generalization_error(inst, state.x_hat) == pytest.approx(sol.E_star, rel=0.02)


def test_update_matches_brute_force_monte_carlo():
    p = HyperParams(0.5, 0.1, 0.1, 1.0)
    scheme = PerturbationScheme("gram", 0.01)
    E, V = 0.05, 0.3
    q = se_moments(E, V, p, UniformUnit(), scheme)
    mc = se_moments(E, V, p, UniformUnit(), scheme, MonteCarlo(10**7, seed=11))
    assert abs(q.E - mc.E) <= 3 * mc.E_err
    assert abs(q.V - mc.V) <= 3 * mc.V_err + 1e-12


def test_update_is_jacobi_from_incoming_state():
    scheme = PerturbationScheme("gram", 0.04)
    s0 = SeState(0.06, 0.2, iteration=3)
    s1 = se_update(s0, P, LogNormal(), scheme)
    m = se_moments(0.06, 0.2, P, LogNormal(), scheme)
    assert (s1.E, s1.V, s1.iteration) == (m.E, m.V, 4)


def test_state_validation():
    with pytest.raises(ValueError):
        SeState(0.0, 0.1)
    with pytest.raises(ValueError):
        SeState(0.1, -1.0)


@pytest.mark.parametrize("model", [UniformUnit(), LogNormal(), ConstantOne()])
@pytest.mark.parametrize("sig", [0.0, 0.1, 0.3])
def test_error_floor(model, sig):
    sol = se_fixed_point(P, model, PerturbationScheme("gram", sig * sig))
    assert sol.converged and sol.E_star >= P.sigma_xi**2
    assert 0.0 <= sol.rho_hat_se <= 1.0


@pytest.mark.parametrize("sig", [0.05, 0.3, 0.6])
def test_schemes_coincide_for_constant_scales(sig):
    a = se_fixed_point(P, ConstantOne(), PerturbationScheme("gram", sig * sig))
    b = se_fixed_point(P, ConstantOne(), PerturbationScheme("isotropic", sig * sig))
    assert a == b


def test_explicit_scales_average_exactly():
    vals = (0.5, 1.0, 1.5)
    a = se_moments(0.1, 0.2, P, Explicit(vals), PerturbationScheme("gram", 0.01))
    parts = [se_moments(0.1, 0.2, P, Explicit((v,)), PerturbationScheme("isotropic", 0.01 * v * v / np.mean(np.square(vals))))
             for v in vals]
    assert a.E - P.sigma_xi**2 == pytest.approx(np.mean([x.E - P.sigma_xi**2 for x in parts]), rel=1e-14)


def test_quadrature_independent_of_order():
    scheme = PerturbationScheme("gram", 0.09)
    a = se_fixed_point(P, LogNormal(), scheme, Quadrature(n_v=151))
    b = se_fixed_point(P, LogNormal(), scheme, Quadrature(n_v=301))
    assert a.E_star == pytest.approx(b.E_star, rel=1e-9)


def test_fixed_point_agrees_with_monte_carlo_integrator():
    scheme = PerturbationScheme("gram", 0.09)
    q = se_fixed_point(P, LogNormal(), scheme)
    mc = se_fixed_point(P, LogNormal(), scheme, MonteCarlo(10**6, seed=3))
    assert mc.converged
    assert abs(q.E_star - mc.E_star) <= 3 * mc.E_stderr


def test_isotropic_uniform_scales_flag_heavy_tail():
    # With isotropic noise the squared error of coordinates with v -> 0 grows
    # like 1/v^2, which is not integrable; at large noise the check must trip.
    with pytest.raises(IntegrationError):
        se_fixed_point(P, UniformUnit(), PerturbationScheme("isotropic", 0.5**2))


def test_divergence_reported_not_raised():
    sol = se_fixed_point(P, LogNormal(), PerturbationScheme("isotropic", 1.0))
    assert not sol.converged and sol.status == "diverged"
    assert sol.rho_hat_se >= P.alpha


def test_max_iter_reported():
    sol = se_fixed_point(HyperParams(0.5, 0.1, 0.1, 0.3), LogNormal(), GRAM0, max_iter=2)
    assert not sol.converged and sol.status == "max_iter" and sol.iterations == 2


def test_bad_controls_rejected():
    with pytest.raises(ValueError):
        se_fixed_point(P, LogNormal(), GRAM0, tol=0)
    with pytest.raises(ValueError):
        Quadrature(n_v=50)


def _lambda_grid():
    return np.geomspace(0.02, 2, 25)


def test_instability_sets_in_as_lambda_decreases():
    flags = [se_fixed_point(HyperParams(0.5, 0.1, 0.1, lam), LogNormal(),
                            PerturbationScheme("gram", 0.01)).rho_hat_se >= 0.5
             for lam in _lambda_grid()]
    # A single switch: unstable for small lambda, stable above.
    assert flags[0] and not flags[-1]
    first_stable = flags.index(False)
    assert not any(flags[first_stable:])


def _curve(model, variant, grid):
    out = []
    for g in grid:
        try:
            sol = se_fixed_point(P, model, PerturbationScheme(variant, g * g))
            out.append(sol.E_star if sol.converged else math.inf)
        except IntegrationError:
            out.append(math.inf)
    return np.array(out)


@pytest.mark.xfail(strict=True, reason="moderate noise lowers E slightly below its noiseless value at lambda=1")
def test_error_nondecreasing_in_noise():
    grid = np.geomspace(1e-3, 0.5, 25)
    for model in (UniformUnit(), LogNormal()):
        for variant in ("gram", "isotropic"):
            E = _curve(model, variant, grid)
            assert np.all(np.diff(E) >= -1e-12)


def test_error_dips_then_rises():
    grid = np.geomspace(1e-3, 0.8, 30)
    for model in (UniformUnit(), LogNormal()):
        E = _curve(model, "gram", grid)
        k = int(np.argmin(E))
        assert np.all(np.diff(E[k:]) >= 0)
        assert E[-1] > E[0]


def test_gram_error_grows_more_gradually():
    # Noise level at which E first doubles its low-noise value.
    grid = np.geomspace(1e-3, 3.0, 300)
    for model in (UniformUnit(), LogNormal()):
        doubling = {}
        for variant in ("gram", "isotropic"):
            E = _curve(model, variant, grid)
            doubling[variant] = grid[np.argmax(E > 2 * E[0])]
        assert doubling["gram"] > doubling["isotropic"]


def test_decoupled_sample_examples():
    assert decoupled_sample(P, 1.0, 0.0, 0.0, 0.0, 0.05, 0.2) == 0.0
    E, V, v = 0.05, 0.2, 0.7
    w = v * v
    sig = (1 + V) / (P.alpha * w)
    thr = P.lam * sig
    inside = decoupled_sample(P, v, thr - 1e-9, 0.0, 0.0, E, V)
    outside = decoupled_sample(P, v, thr + 1e-9, 0.0, 0.0, E, V)
    assert inside == 0.0 and outside > 0.0


def test_decoupled_sample_vectorised_and_validated():
    out = decoupled_sample(P, np.array([0.5, 1.0]), np.array([3.0, 0.0]), 0.0, 0.0, 0.05, 0.2)
    assert out.shape == (2,)
    with pytest.raises(ValueError):
        decoupled_sample(P, 0.0, 1.0, 0.0, 0.0, 0.05, 0.2)


def _sol(rho):
    return SeSolution(0.1, 0.1, rho, rho < 0.5, True, 1, "test")


@pytest.mark.parametrize("rho, margin", [(0.0, 0.5), (0.6, -0.1), (0.5, 0.0)])
def test_stability_margin(rho, margin):
    assert stability_margin(_sol(rho), P) == pytest.approx(margin)
    assert _sol(rho).stable == (margin > 0)
