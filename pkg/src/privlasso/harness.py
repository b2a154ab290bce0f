"""Cell runners and the ordered sweep."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import lru_cache
from typing import Iterator

from .amp import AmpConfig, amp_run, generalization_error, rho_hat
from .artifacts import SCHEMA_VERSION, RecordWriter, RunRecord
from .config import RunConfig
from .core import HyperParams, PerturbationScheme
from .instance import STREAM_ETA, derive_seed, generate_instance
from .integrators import IntegrationError
from .oracle import OracleMaxIterError, UnboundedObjectiveError, oracle_solve
from .perturbation import make_noise
from .privacy import cw_on_ave_kl
from .state_evolution import se_fixed_point


def eta_seed(instance_seed: int) -> int:
    return derive_seed(instance_seed, STREAM_ETA)


def instance_seed(base_seed: int, seed: int) -> int:
    """Seed of the instance used for sweep seed ``seed`` under base ``base_seed``."""
    return derive_seed(base_seed, seed)


def _record(cfg: RunConfig, p: HyperParams, engine, scheme, sigma, **kw) -> RunRecord:
    base = dict(N=None, M=None, seed=None, damping=None, iterations=None,
                E_generalization=None, rho_hat=None, cw_onave_kl=None)
    base.update(kw)
    return RunRecord(schema_version=SCHEMA_VERSION, engine=engine, scheme=scheme,
                     scale_model=cfg.scale_model.label(), alpha=p.alpha, rho=p.rho,
                     sigma_xi=p.sigma_xi, lam=p.lam, sigma_eta_bar=sigma, **base)


def run_se_cell(cfg: RunConfig, lam: float, scheme: str, sigma: float) -> RunRecord:
    t0 = time.perf_counter()
    p = replace(cfg.params, lam=lam, sigma_eta_bar_sq=sigma * sigma)
    ps = PerturbationScheme(scheme, sigma * sigma)
    try:
        sol = se_fixed_point(p, cfg.scale_model, ps, cfg.integrator,
                             max_iter=cfg.se_max_iter, tol=cfg.se_tol)
    except IntegrationError:
        return _record(cfg, p, "se", scheme, sigma, status="se_unstable",
                       wall_time_ms=1e3 * (time.perf_counter() - t0))
    kl = None
    status = sol.status
    if sol.converged:
        try:
            kl = cw_on_ave_kl(sol, p, cfg.scale_model, ps, cfg.integrator)
        except IntegrationError:
            status = "se_unstable"
    finite = math.isfinite(sol.E_star)
    return _record(cfg, p, "se", scheme, sigma, status=status, iterations=sol.iterations,
                   E_generalization=sol.E_star if finite else None, rho_hat=sol.rho_hat_se,
                   cw_onave_kl=kl, wall_time_ms=1e3 * (time.perf_counter() - t0))


@lru_cache(maxsize=2)
def _cached_instance(alpha, rho, sigma_xi, model, n, seed):
    return generate_instance(HyperParams(alpha, rho, sigma_xi, 1.0), model, n, seed)


def run_amp_cells(cfg: RunConfig, engine: str, lam: float, scheme: str, n: int,
                  seed: int) -> list[RunRecord]:
    """All noise levels for one (engine, scheme, lambda, N, seed)."""
    p0 = cfg.params
    inst = _cached_instance(p0.alpha, p0.rho, p0.sigma_xi, cfg.scale_model, n, seed)
    out = []
    for sigma in cfg.sweep.sigma_eta_grid:
        t0 = time.perf_counter()
        p = replace(p0, lam=lam, sigma_eta_bar_sq=sigma * sigma)
        noise = make_noise(inst, PerturbationScheme(scheme, sigma * sigma), eta_seed(seed))
        common = dict(N=inst.N, M=inst.M, seed=seed)
        if engine == "amp":
            state, _ = amp_run(inst, noise, p, cfg.amp, trace=False)
            finite = state.status.value != "diverged"
            rec = _record(cfg, p, "amp", scheme, sigma, **common, damping=cfg.amp.damping,
                          status=state.status.value, iterations=state.iteration,
                          E_generalization=generalization_error(inst, state.x_hat) if finite else None,
                          rho_hat=rho_hat(state), wall_time_ms=1e3 * (time.perf_counter() - t0))
        else:
            try:
                res = oracle_solve(inst, noise, lam)
                x, status, its = res.x, "converged", res.iterations
            except OracleMaxIterError as exc:
                x, status, its = exc.x_best, "max_iter", None
            except UnboundedObjectiveError:
                x, status, its = None, "diverged", None
            rec = _record(cfg, p, "oracle", scheme, sigma, **common, status=status, iterations=its,
                          E_generalization=None if x is None else generalization_error(inst, x),
                          rho_hat=None if x is None else float((x != 0).mean()),
                          wall_time_ms=1e3 * (time.perf_counter() - t0))
        out.append(rec)
    return out


def sweep_tasks(cfg: RunConfig) -> list[tuple]:
    """Tasks in output order: engine, scheme, lambda, then N/seed or sigma."""
    sw = cfg.sweep
    tasks = []
    for engine in sw.engines:
        for scheme in sw.schemes:
            for lam in sw.lambda_grid:
                if engine == "se":
                    tasks += [("se", lam, scheme, s) for s in sw.sigma_eta_grid]
                else:
                    tasks += [(engine, lam, scheme, n, instance_seed(cfg.seed, s))
                              for n in sw.n_values for s in sw.seeds]
    return tasks


def _run_task(cfg: RunConfig, task: tuple) -> list[RunRecord]:
    if task[0] == "se":
        return [run_se_cell(cfg, *task[1:])]
    return run_amp_cells(cfg, *task)


def _run_task_packed(args):
    return _run_task(*args)


def iter_sweep(cfg: RunConfig, threads: int = 1) -> Iterator[RunRecord]:
    """Yield records in deterministic grid order, whatever the completion order."""
    tasks = sweep_tasks(cfg)
    if threads <= 1:
        for t in tasks:
            yield from _run_task(cfg, t)
        return
    with ProcessPoolExecutor(max_workers=threads) as pool:
        for recs in pool.map(_run_task_packed, [(cfg, t) for t in tasks]):
            yield from recs


def run_sweep(cfg: RunConfig, out_path, threads: int = 1) -> int:
    n = 0
    with RecordWriter(out_path) as w:
        for rec in iter_sweep(cfg, threads):
            w.write(rec)
            n += 1
    return n
