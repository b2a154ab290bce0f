"""Command-line interface: ``privlasso <command> [--config FILE] [--out PATH]``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .amp import amp_run, generalization_error, rho_hat
from .artifacts import (FormatError, json_safe, load_instance, load_noise, save_instance,
                        save_noise, write_json)
from .config import ConfigError, RunConfig, load_config
from .core import PerturbationScheme
from .harness import eta_seed, run_sweep
from .instance import generate_instance
from .integrators import IntegrationError
from .perturbation import make_noise
from .privacy import cw_on_ave_kl
from .state_evolution import se_fixed_point
from .validate import run_all


def _emit(obj: dict, out: str | None) -> None:
    obj = json_safe(obj)
    if out:
        write_json(out, obj)
    print(json.dumps(obj, indent=2, sort_keys=True))


def _scheme(cfg: RunConfig) -> PerturbationScheme:
    return PerturbationScheme(cfg.scheme, cfg.params.sigma_eta_bar_sq)


def _noise_path(out: str) -> str:
    p = Path(out)
    return str(p.with_name(p.stem + ".eta.npz"))


def cmd_generate(cfg: RunConfig, args) -> int:
    out = args.out or "instance.npz"
    inst = generate_instance(cfg.params, cfg.scale_model, cfg.N, cfg.seed)
    noise = make_noise(inst, _scheme(cfg), eta_seed(cfg.seed))
    save_instance(out, inst)
    save_noise(_noise_path(out), noise, eta_seed(cfg.seed))
    _emit({"instance": out, "eta": _noise_path(out), "N": inst.N, "M": inst.M,
           "seed": cfg.seed, "config": cfg.to_dict()}, None)
    return 0


def cmd_run_amp(cfg: RunConfig, args) -> int:
    if cfg.instance:
        inst = load_instance(cfg.instance)
    else:
        inst = generate_instance(cfg.params, cfg.scale_model, cfg.N, cfg.seed)
    if cfg.eta:
        noise = load_noise(cfg.eta)
    else:
        noise = make_noise(inst, _scheme(cfg), eta_seed(inst.seed))
    state, traj = amp_run(inst, noise, cfg.params, cfg.amp)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            cols = list(asdict(traj[0]).keys()) if traj else []
            w.writerow(cols)
            for t in traj:
                w.writerow([repr(v) for v in asdict(t).values()])
    diverged = state.status.value == "diverged"
    _emit({"status": state.status.value, "iterations": state.iteration,
           "E_generalization": None if diverged else generalization_error(inst, state.x_hat),
           "rho_hat": rho_hat(state), "N": inst.N, "M": inst.M, "seed": inst.seed,
           "damping": cfg.amp.damping, "trajectory": args.out}, None)
    return 0


def _solve_se(cfg: RunConfig):
    return se_fixed_point(cfg.params, cfg.scale_model, _scheme(cfg), cfg.integrator,
                          max_iter=cfg.se_max_iter, tol=cfg.se_tol)


def cmd_run_se(cfg: RunConfig, args) -> int:
    try:
        sol = _solve_se(cfg)
    except IntegrationError as exc:
        _emit({"status": "se_unstable", "error": str(exc)}, args.out)
        return 0
    d = asdict(sol)
    d["stability_margin"] = cfg.params.alpha - sol.rho_hat_se
    _emit(d, args.out)
    return 0


def cmd_privacy(cfg: RunConfig, args) -> int:
    try:
        sol = _solve_se(cfg)
        if not sol.converged and cfg.params.sigma_eta_bar_sq > 0:
            _emit({"status": sol.status, "E_star": sol.E_star, "cw_onave_kl": None}, args.out)
            return 0
        kl = cw_on_ave_kl(sol, cfg.params, cfg.scale_model, _scheme(cfg), cfg.integrator)
    except IntegrationError as exc:
        _emit({"status": "se_unstable", "error": str(exc)}, args.out)
        return 0
    _emit({"status": sol.status, "E_star": sol.E_star, "V_star": sol.V_star,
           "rho_hat_se": sol.rho_hat_se, "cw_onave_kl": kl,
           "divergent": math.isinf(kl)}, args.out)
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    out = args.out or "sweep.csv"
    n = run_sweep(cfg, out, threads=args.threads)
    meta = {"config": cfg.to_dict(), "rows": n, "threads": args.threads}
    write_json(str(Path(out).with_suffix(".meta.json")), json_safe(meta))
    print(f"wrote {n} rows to {out}")
    return 0


def cmd_validate(cfg: RunConfig, args) -> int:
    report = run_all(cfg.seed)
    _emit(report, args.out)
    return 0 if report["passed"] else 1


COMMANDS = {
    "generate": cmd_generate, "run-amp": cmd_run_amp, "run-se": cmd_run_se,
    "privacy": cmd_privacy, "sweep": cmd_sweep, "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="privlasso", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--threads", type=int, default=1, help="worker processes (sweep)")
        sp.add_argument("--seed", type=int, help="override the configured seed (u64)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            print("config error: --seed must be a u64", file=sys.stderr)
            return 2
        cfg = replace(cfg, seed=args.seed)
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, args)
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
