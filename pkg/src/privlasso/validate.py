"""Self-check suite behind the ``validate`` command.

Each check returns a dict with ``name``, ``passed`` and details; the module
looks kernels up through the module object so patched functions are seen.
"""
from __future__ import annotations

import math
import time

import numpy as np

from . import kernels
from .amp import AmpConfig, amp_run
from .core import HyperParams, PerturbationScheme, Scheme, UniformUnit
from .instance import generate_instance
from .oracle import coordinate_descent, kkt_residual, objective_value, oracle_solve
from .perturbation import allocate_variances, make_noise
from .privacy import cw_on_ave_kl
from .state_evolution import se_fixed_point


def random_kernel_points(rng, n):
    """Points (m_hat, Sigma, lam, sigma_eta) well inside the valid domain."""
    return (rng.uniform(-3, 3, n), rng.uniform(0.2, 3, n),
            rng.uniform(0.05, 2, n), rng.uniform(0.2, 2, n))


def check_derivatives(seed=0, n=100, h=1e-5):
    rng = np.random.default_rng(seed)
    m, sig, lam, se = random_kernel_points(rng, n)
    fd1 = (kernels.r_hat(m + h, sig, lam, se) - kernels.r_hat(m - h, sig, lam, se)) / (2 * h)
    fd2 = (kernels.r_hat_d1(m + h, sig, lam, se) - kernels.r_hat_d1(m - h, sig, lam, se)) / (2 * h)
    e1 = float(np.max(np.abs(kernels.r_hat_d1(m, sig, lam, se) - fd1)))
    e2 = float(np.max(np.abs(kernels.r_hat_d2(m, sig, lam, se) - fd2)))
    return {"name": "derivative_check", "passed": bool(e1 <= 1e-6 and e2 <= 1e-5),
            "max_err_d1": e1, "max_err_d2": e2}


def check_budget(seed=0, n_vectors=1000):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_vectors):
        n = int(rng.integers(1, 500))
        v = rng.uniform(1e-3, 5, n)
        sbar2 = float(rng.uniform(1e-4, 4))
        for variant in Scheme:
            var = allocate_variances(PerturbationScheme(variant, sbar2), v)
            worst = max(worst, abs(var.sum() - n * sbar2) / (n * sbar2))
    return {"name": "budget_conservation", "passed": bool(worst <= 1e-12), "max_rel_err": worst}


def check_oracle(seed=0, n=100):
    worst_gap = worst_kkt = worst_cd = 0.0
    n_conv = 0
    cfg = AmpConfig()
    k = 0
    for alpha in (0.5, 2.0):
        for lam in (0.5, 1.0):
            for sig in (0.0, 0.05):
                p = HyperParams(alpha, 0.1, 0.1, lam, sig * sig)
                inst = generate_instance(p, UniformUnit(), n, seed + k)
                eta = make_noise(inst, PerturbationScheme("gram", sig * sig), seed + 1000 + k)
                k += 1
                ref = oracle_solve(inst, eta, lam, tol=1e-10)
                cd = coordinate_descent(inst, eta, lam, tol=1e-10)
                worst_cd = max(worst_cd, abs(ref.objective - cd.objective) / max(1.0, abs(ref.objective)))
                state, _ = amp_run(inst, eta, p, cfg, trace=False)
                if state.status.value != "converged":
                    continue
                n_conv += 1
                f_amp = objective_value(inst, eta, lam, state.x_hat)
                worst_gap = max(worst_gap, (f_amp - ref.objective) / max(1e-300, abs(ref.objective)))
                worst_kkt = max(worst_kkt, kkt_residual(inst, eta, lam, state.x_hat))
    ok = worst_gap <= 1e-6 and worst_kkt <= 10 * cfg.tol and worst_cd <= 1e-10 and n_conv > 0
    return {"name": "oracle_equivalence", "passed": bool(ok), "amp_converged": n_conv,
            "max_rel_objective_gap": worst_gap, "max_kkt_residual": worst_kkt,
            "max_fista_cd_gap": worst_cd}


def check_trivial():
    p = HyperParams(0.5, 0.0, 0.1, 50.0)
    sol = se_fixed_point(p, UniformUnit(), PerturbationScheme("gram", 0.0))
    kl = cw_on_ave_kl(sol, p, UniformUnit(), PerturbationScheme("gram", 0.0))
    ok = abs(sol.E_star - 0.01) <= 1e-10 and sol.V_star == 0 and math.isinf(kl)
    return {"name": "trivial_fixed_point", "passed": bool(ok), "E_star": sol.E_star,
            "V_star": sol.V_star, "cw_kl": "inf" if math.isinf(kl) else kl}


CHECKS = (check_derivatives, check_budget, check_oracle, check_trivial)


def run_all(seed: int = 0) -> dict:
    results = []
    for check in CHECKS:
        t0 = time.perf_counter()
        try:
            res = check(seed) if check is not check_trivial else check()
        except Exception as exc:  # reported, not raised: the report must be complete
            res = {"name": check.__name__.removeprefix("check_"), "passed": False,
                   "error": f"{type(exc).__name__}: {exc}"}
        res["seconds"] = round(time.perf_counter() - t0, 3)
        results.append(res)
    failed = [r["name"] for r in results if not r["passed"]]
    return {"passed": not failed, "failed": failed, "checks": results}
