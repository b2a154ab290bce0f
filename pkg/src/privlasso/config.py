"""JSON run/sweep configuration.

Schema (every key optional unless noted; defaults are materialised into the
output metadata)::

    {
      "params": {"alpha": 0.5, "rho": 0.1, "sigma_xi": 0.1, "lam": 1.0,
                 "sigma_eta_bar": 0.0},
      "scale_model": {"kind": "uniform"}               # or "constant",
                    | {"kind": "lognormal", "mu_log": 0, "sigma_log": 0.5}
                    | {"kind": "explicit", "samples": [..]},
      "scheme": "gram",                                 # or "isotropic"
      "N": 1000, "seed": 0,
      "amp": {"max_iter": 2000, "tol": 1e-8, "damping": 0.0,
              "divergence_norm": 1e8, "onsager": "scalar"},
      "se": {"max_iter": 5000, "tol": 1e-10,
             "integrator": {"kind": "quadrature", "n_v": 201, "n_m": 48, "rtol": 1e-6}
                         | {"kind": "montecarlo", "n_samples": 1000000, "seed": 0}},
      "instance": "path.npz", "eta": "path.npz",        # run-amp inputs
      "sweep": {"schemes": [...], "lambda_grid": [...], "sigma_eta_grid": [...],
                "n_values": [...], "seeds": [...], "engines": ["amp", "se"]}
    }
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .amp import AmpConfig
from .core import ConstantOne, Explicit, HyperParams, LogNormal, Scheme, UniformUnit, validate_params
from .integrators import MonteCarlo, Quadrature

ENGINES = ("amp", "se", "oracle")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is a dotted path, ``line`` 1-based when known."""

    def __init__(self, field: str, message: str, line: int | None = None):
        self.field = field
        self.line = line
        where = f"line {line}, " if line else ""
        super().__init__(f"{where}field '{field}': {message}")


def default_sigma_grid(n: int = 20) -> list[float]:
    return [float(x) for x in np.logspace(-3, 0.5, n)]


@dataclass(frozen=True)
class SweepSpec:
    schemes: tuple[str, ...] = ("isotropic", "gram")
    lambda_grid: tuple[float, ...] = (1.0,)
    sigma_eta_grid: tuple[float, ...] = tuple(default_sigma_grid())
    n_values: tuple[int, ...] = (1000,)
    seeds: tuple[int, ...] = tuple(range(10))
    engines: tuple[str, ...] = ("amp", "se")


@dataclass(frozen=True)
class RunConfig:
    params: HyperParams
    scale_model: Any
    scheme: str = "gram"
    N: int = 1000
    seed: int = 0
    amp: AmpConfig = AmpConfig()
    se_max_iter: int = 5000
    se_tol: float = 1e-10
    integrator: Any = Quadrature()
    instance: str | None = None
    eta: str | None = None
    sweep: SweepSpec = field(default_factory=SweepSpec)

    def to_dict(self) -> dict:
        """Fully materialised configuration, suitable for reloading."""
        p = self.params
        return {
            "params": {"alpha": p.alpha, "rho": p.rho, "sigma_xi": p.sigma_xi, "lam": p.lam,
                       "sigma_eta_bar": p.sigma_eta_bar},
            "scale_model": scale_model_to_dict(self.scale_model),
            "scheme": self.scheme, "N": self.N, "seed": self.seed,
            "amp": asdict(self.amp),
            "se": {"max_iter": self.se_max_iter, "tol": self.se_tol,
                   "integrator": integrator_to_dict(self.integrator)},
            "instance": self.instance, "eta": self.eta,
            "sweep": {k: list(v) for k, v in asdict(self.sweep).items()},
        }


def scale_model_to_dict(model) -> dict:
    if isinstance(model, ConstantOne):
        return {"kind": "constant"}
    if isinstance(model, UniformUnit):
        return {"kind": "uniform"}
    if isinstance(model, LogNormal):
        return {"kind": "lognormal", "mu_log": model.mu_log, "sigma_log": model.sigma_log}
    return {"kind": "explicit", "samples": list(model.samples)}


def integrator_to_dict(integ) -> dict:
    if isinstance(integ, MonteCarlo):
        return {"kind": "montecarlo", "n_samples": integ.n_samples, "seed": integ.seed}
    return {"kind": "quadrature", "n_v": integ.n_v, "n_m": integ.n_m, "rtol": integ.rtol}


class _Reader:
    """Validates a parsed JSON tree and maps field paths to source lines."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def line_of(self, path: str) -> int | None:
        key = path.split(".")[-1].split("[")[0]
        pat = re.compile(r'"%s"\s*:' % re.escape(key))
        for i, ln in enumerate(self.lines, 1):
            if pat.search(ln):
                return i
        return None

    def fail(self, path: str, msg: str):
        raise ConfigError(path, msg, self.line_of(path))

    def obj(self, d, path, allowed):
        if not isinstance(d, dict):
            self.fail(path, "expected an object")
        for k in d:
            if k not in allowed:
                self.fail(f"{path}.{k}" if path else k, "unknown key")
        return d

    def num(self, d, key, path, default, *, integer=False, check=None, why=""):
        if key not in d:
            return default
        val = d[key]
        full = f"{path}.{key}" if path else key
        ok_type = isinstance(val, int) if integer else isinstance(val, (int, float))
        if isinstance(val, bool) or not ok_type:
            self.fail(full, f"expected {'an integer' if integer else 'a number'}, got {val!r}")
        if check is not None and not check(val):
            self.fail(full, why or f"invalid value {val!r}")
        return int(val) if integer else float(val)

    def choice(self, d, key, path, default, options):
        if key not in d:
            return default
        val = d[key]
        if val not in options:
            self.fail(f"{path}.{key}" if path else key, f"expected one of {list(options)}, got {val!r}")
        return val

    def num_list(self, d, key, path, default, *, integer=False, sorted_=False, nonempty=True):
        if key not in d:
            return default
        val = d[key]
        full = f"{path}.{key}"
        if not isinstance(val, list) or (nonempty and not val):
            self.fail(full, "expected a nonempty list")
        for i, x in enumerate(val):
            ok = isinstance(x, int) if integer else isinstance(x, (int, float))
            if isinstance(x, bool) or not ok:
                self.fail(f"{full}[{i}]", f"expected {'an integer' if integer else 'a number'}, got {x!r}")
        if sorted_ and list(val) != sorted(val):
            self.fail(full, "must be sorted ascending")
        return tuple(int(x) if integer else float(x) for x in val)


def _scale_model(r: _Reader, d):
    d = r.obj(d, "scale_model", {"kind", "mu_log", "sigma_log", "samples"})
    kind = r.choice(d, "kind", "scale_model", "uniform", ("constant", "uniform", "lognormal", "explicit"))
    if kind == "constant":
        return ConstantOne()
    if kind == "uniform":
        return UniformUnit()
    if kind == "lognormal":
        mu = r.num(d, "mu_log", "scale_model", 0.0)
        sd = r.num(d, "sigma_log", "scale_model", 0.5, check=lambda x: x > 0, why="must be > 0")
        return LogNormal(mu, sd)
    samples = r.num_list(d, "samples", "scale_model", None)
    if samples is None:
        r.fail("scale_model.samples", "required for kind 'explicit'")
    if any(s <= 0 for s in samples):
        r.fail("scale_model.samples", "all samples must be > 0")
    return Explicit(samples)


def _integrator(r: _Reader, d):
    d = r.obj(d, "se.integrator", {"kind", "n_v", "n_m", "rtol", "n_samples", "seed"})
    kind = r.choice(d, "kind", "se.integrator", "quadrature", ("quadrature", "montecarlo"))
    if kind == "quadrature":
        return Quadrature(
            n_v=r.num(d, "n_v", "se.integrator", 201, integer=True, check=lambda x: x >= 101, why="must be >= 101"),
            n_m=r.num(d, "n_m", "se.integrator", 48, integer=True, check=lambda x: x >= 16, why="must be >= 16"),
            rtol=r.num(d, "rtol", "se.integrator", 1e-6, check=lambda x: x > 0, why="must be > 0"))
    return MonteCarlo(
        n_samples=r.num(d, "n_samples", "se.integrator", 1_000_000, integer=True,
                        check=lambda x: x >= 2, why="must be >= 2"),
        seed=r.num(d, "seed", "se.integrator", 0, integer=True, check=lambda x: x >= 0, why="must be >= 0"))


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<document>", exc.msg, exc.lineno) from None
    r = _Reader(text)
    raw = r.obj(raw, "", {"params", "scale_model", "scheme", "N", "seed", "amp", "se",
                          "instance", "eta", "sweep"})

    pd = r.obj(raw.get("params", {}), "params", {"alpha", "rho", "sigma_xi", "lam", "sigma_eta_bar"})
    sig = r.num(pd, "sigma_eta_bar", "params", 0.0, check=lambda x: x >= 0, why="must be >= 0")
    p = HyperParams(
        alpha=r.num(pd, "alpha", "params", 0.5),
        rho=r.num(pd, "rho", "params", 0.1),
        sigma_xi=r.num(pd, "sigma_xi", "params", 0.1),
        lam=r.num(pd, "lam", "params", 1.0),
        sigma_eta_bar_sq=sig * sig,
    )
    for msg in validate_params(p, allow_null_signal=True):
        key = {"lambda": "lam", "sigma_eta_bar_sq": "sigma_eta_bar"}.get(msg.split()[0], msg.split()[0])
        r.fail(f"params.{key}", msg)

    model = _scale_model(r, raw.get("scale_model", {"kind": "uniform"}))
    scheme = r.choice(raw, "scheme", "", "gram", tuple(s.value for s in Scheme))
    n = r.num(raw, "N", "", 1000, integer=True, check=lambda x: x >= 1, why="must be >= 1")
    seed = r.num(raw, "seed", "", 0, integer=True, check=lambda x: 0 <= x < 2**64, why="must be a u64")

    ad = r.obj(raw.get("amp", {}), "amp", {f.name for f in fields(AmpConfig)})
    defaults = AmpConfig()
    try:
        amp = AmpConfig(
            max_iter=r.num(ad, "max_iter", "amp", defaults.max_iter, integer=True),
            tol=r.num(ad, "tol", "amp", defaults.tol),
            damping=r.num(ad, "damping", "amp", defaults.damping),
            divergence_norm=r.num(ad, "divergence_norm", "amp", defaults.divergence_norm),
            init_seed=r.num(ad, "init_seed", "amp", defaults.init_seed, integer=True),
            onsager=r.choice(ad, "onsager", "amp", defaults.onsager, ("scalar", "elementwise", "none")),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        r.fail(f"amp.{str(exc).split()[0]}", str(exc))

    sd = r.obj(raw.get("se", {}), "se", {"max_iter", "tol", "integrator"})
    se_max_iter = r.num(sd, "max_iter", "se", 5000, integer=True, check=lambda x: x >= 1, why="must be >= 1")
    se_tol = r.num(sd, "tol", "se", 1e-10, check=lambda x: x > 0, why="must be > 0")
    integ = _integrator(r, sd.get("integrator", {}))

    for key in ("instance", "eta"):
        if key in raw and not (raw[key] is None or isinstance(raw[key], str)):
            r.fail(key, "expected a path string")

    wd = r.obj(raw.get("sweep", {}), "sweep",
               {"schemes", "lambda_grid", "sigma_eta_grid", "n_values", "seeds", "engines"})
    base = SweepSpec()
    schemes = tuple(wd.get("schemes", base.schemes))
    for i, s in enumerate(schemes):
        if s not in ("isotropic", "gram"):
            r.fail(f"sweep.schemes[{i}]", f"unknown scheme {s!r}")
    engines = tuple(wd.get("engines", base.engines))
    for i, e in enumerate(engines):
        if e not in ENGINES:
            r.fail(f"sweep.engines[{i}]", f"unknown engine {e!r}")
    sweep = SweepSpec(
        schemes=schemes,
        lambda_grid=r.num_list(wd, "lambda_grid", "sweep", (p.lam,), sorted_=True),
        sigma_eta_grid=r.num_list(wd, "sigma_eta_grid", "sweep", base.sigma_eta_grid, sorted_=True),
        n_values=r.num_list(wd, "n_values", "sweep", (n,), integer=True),
        seeds=r.num_list(wd, "seeds", "sweep", base.seeds, integer=True, nonempty=False),
        engines=engines,
    )
    if not schemes:
        r.fail("sweep.schemes", "expected a nonempty list")
    if any(x <= 0 for x in sweep.lambda_grid):
        r.fail("sweep.lambda_grid", "values must be > 0")
    if any(x < 0 for x in sweep.sigma_eta_grid):
        r.fail("sweep.sigma_eta_grid", "values must be >= 0")
    if ({"amp", "oracle"} & set(engines)) and not sweep.seeds:
        r.fail("sweep.seeds", "required when the amp or oracle engine is selected")

    return RunConfig(p, model, scheme, n, seed, amp, se_max_iter, se_tol, integ,
                     raw.get("instance"), raw.get("eta"), sweep)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return parse_config("{}")
    return parse_config(Path(path).read_text(encoding="utf-8"))
