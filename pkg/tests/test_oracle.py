import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from privlasso.amp import AmpConfig, Status, amp_run
from privlasso.core import HyperParams, PerturbationScheme, ProblemInstance, UniformUnit
from privlasso.instance import generate_instance
from privlasso.oracle import (OracleMaxIterError, UnboundedObjectiveError, coordinate_descent,
                              kkt_residual, lipschitz_constant, objective_value, oracle_solve,
                              recession_certificate)
from privlasso.perturbation import make_noise


def _tiny(F, y, x0=None):
    F = np.atleast_2d(np.asarray(F, float))
    n = F.shape[1]
    return ProblemInstance(F=F, y=np.asarray(y, float), x0=np.zeros(n) if x0 is None else x0,
                           v=np.ones(n), sigma_xi=0.0, seed=0)


def _random(alpha=2.0, n=60, seed=0, sigma=0.05, lam=0.5):
    p = HyperParams(alpha, 0.1, 0.1, lam)
    inst = generate_instance(p, UniformUnit(), n, seed)
    return inst, make_noise(inst, PerturbationScheme("isotropic", sigma * sigma), seed + 100)


def test_scalar_soft_threshold():
    res = oracle_solve(_tiny([[1.0]], [2.0]), None, 1.0)
    assert res.x[0] == pytest.approx(1.0, abs=1e-12)
    assert res.objective == pytest.approx(0.5 + 1.0)


def test_scalar_tilt_shifts_the_threshold_input():
    res = oracle_solve(_tiny([[1.0]], [2.0]), np.array([0.5]), 1.0)
    assert res.x[0] == pytest.approx(0.5, abs=1e-12)


def test_objective_at_zero_is_half_squared_norm():
    inst, noise = _random()
    assert objective_value(inst, noise, 0.7, np.zeros(inst.N)) == pytest.approx(0.5 * inst.y @ inst.y)


def test_objective_at_truth_with_exact_fit():
    p = HyperParams(0.5, 0.2, 0.0, 1.0)
    inst = generate_instance(p, UniformUnit(), 80, 3)
    val = objective_value(inst, None, 0.7, inst.x0)
    assert val == pytest.approx(0.7 * np.abs(inst.x0).sum(), rel=1e-12)


def test_objective_rejects_bad_length():
    inst, noise = _random()
    with pytest.raises(ValueError):
        objective_value(inst, noise, 1.0, np.zeros(inst.N + 1))


@pytest.mark.parametrize("alpha,sigma", [(2.0, 0.0), (2.0, 0.05), (0.5, 0.0)])
def test_two_solvers_agree(alpha, sigma):
    inst, noise = _random(alpha=alpha, sigma=sigma, lam=1.0)
    a = oracle_solve(inst, noise, 1.0, tol=1e-11)
    b = coordinate_descent(inst, noise, 1.0, tol=1e-11)
    assert abs(a.objective - b.objective) <= 1e-10 * max(1.0, abs(a.objective))
    np.testing.assert_allclose(a.x, b.x, atol=1e-8)


@pytest.mark.parametrize("solver", [oracle_solve, coordinate_descent])
def test_kkt_certificate(solver):
    tol = 1e-9
    inst, noise = _random(sigma=0.05)
    res = solver(inst, noise, 0.5, tol=tol)
    F, y, eta = inst.F, inst.y, noise.eta
    grad = F.T @ (F @ res.x - y) + eta
    act = res.x != 0
    assert np.all(np.abs(grad[~act]) <= 0.5 + tol)
    assert np.all(np.abs(grad[act] + 0.5 * np.sign(res.x[act])) <= tol)
    assert res.kkt_residual == pytest.approx(kkt_residual(inst, noise, 0.5, res.x), abs=1e-15)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_permutation_invariance(seed):
    inst, noise = _random(n=30, seed=seed % 1000, lam=0.5)
    perm = np.random.default_rng(seed).permutation(inst.N)
    shuffled = ProblemInstance(F=inst.F[:, perm], y=inst.y, x0=inst.x0[perm], v=inst.v[perm],
                               sigma_xi=inst.sigma_xi, seed=inst.seed)
    a = oracle_solve(inst, noise, 0.5)
    b = oracle_solve(shuffled, noise.eta[perm], 0.5)
    np.testing.assert_allclose(b.x, a.x[perm], atol=1e-8)


def test_objective_never_increases():
    inst, noise = _random(alpha=0.5, n=120, sigma=0.02)
    seen = []
    oracle_solve(inst, noise, 0.05, callback=lambda it, x, f: seen.append(f))
    steps = np.diff(seen)
    assert len(seen) > 10
    assert np.all(steps <= 1e-12 * np.abs(seen[1:]))


def test_max_iter_error_carries_best_iterate():
    inst, noise = _random()
    with pytest.raises(OracleMaxIterError) as info:
        oracle_solve(inst, noise, 0.5, tol=1e-14, max_iter=3)
    err = info.value
    assert err.x_best.shape == (inst.N,)
    assert err.residual == pytest.approx(kkt_residual(inst, noise, 0.5, err.x_best))
    assert err.objective == pytest.approx(objective_value(inst, noise, 0.5, err.x_best))


def test_oracle_never_worse_than_amp():
    p = HyperParams(2.0, 0.1, 0.1, 1.0)
    inst = generate_instance(p, UniformUnit(), 200, 4)
    noise = make_noise(inst, PerturbationScheme("gram", 0.05**2), 5)
    state, _ = amp_run(inst, noise, p, AmpConfig(), trace=False)
    assert state.status is Status.CONVERGED
    res = oracle_solve(inst, noise, 1.0)
    assert res.objective <= objective_value(inst, noise, 1.0, state.x_hat) + 1e-8


def test_unbounded_objective_detected():
    # d = (1, -1) spans ker F and lam|d|_1 + eta.d = 2 - 4 < 0.
    inst = _tiny([[1.0, 1.0]], [1.0])
    eta = np.array([-2.0, 2.0])
    d = recession_certificate(inst.F, eta, 1.0)
    assert d is not None and abs(inst.F @ d)[0] < 1e-9
    with pytest.raises(UnboundedObjectiveError):
        oracle_solve(inst, eta, 1.0)
    with pytest.raises(UnboundedObjectiveError):
        coordinate_descent(inst, eta, 1.0)


def test_no_certificate_when_tilt_is_dominated():
    inst = _tiny([[1.0, 1.0]], [1.0])
    assert recession_certificate(inst.F, np.array([-0.5, 0.5]), 1.0) is None


def test_lipschitz_constant_is_top_eigenvalue():
    inst, _ = _random(alpha=0.5)
    top = np.linalg.eigvalsh(inst.F.T @ inst.F)[-1]
    assert lipschitz_constant(inst.F) == pytest.approx(top, rel=1e-8)


def test_bad_arguments():
    inst = _tiny([[1.0]], [2.0])
    with pytest.raises(ValueError):
        oracle_solve(inst, None, 1.0, tol=0.0)
    with pytest.raises(ValueError):
        oracle_solve(inst, np.zeros(2), 1.0)
