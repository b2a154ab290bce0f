"""Shared domain types: hyperparameters, scale models, perturbation schemes, instances."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


@dataclass(frozen=True)
class HyperParams:
    alpha: float
    rho: float
    sigma_xi: float
    lam: float
    sigma_eta_bar_sq: float = 0.0

    @property
    def sigma_eta_bar(self) -> float:
        return math.sqrt(self.sigma_eta_bar_sq)


def validate_params(p: HyperParams, allow_null_signal: bool = False) -> list[str]:
    """Return every violated invariant of ``p`` (empty list means ok).

    ``allow_null_signal`` admits rho = 0, the degenerate all-zero signal the
    solvers accept as a limiting case.
    """
    out = []
    for name in ("alpha", "rho", "sigma_xi", "lam", "sigma_eta_bar_sq"):
        if not math.isfinite(getattr(p, name)):
            out.append(f"{name} must be finite")
    if not p.alpha > 0:
        out.append("alpha must be positive")
    if not (0 <= p.rho <= 1 if allow_null_signal else 0 < p.rho <= 1):
        out.append("rho out of range (0, 1]")
    if not p.sigma_xi >= 0:
        out.append("sigma_xi must be nonnegative")
    if not p.lam > 0:
        out.append("lambda must be positive")
    if not p.sigma_eta_bar_sq >= 0:
        out.append("sigma_eta_bar_sq must be nonnegative")
    return out


def check_params(p: HyperParams, allow_null_signal: bool = False) -> HyperParams:
    errs = validate_params(p, allow_null_signal)
    if errs:
        raise ValueError("invalid hyperparameters: " + "; ".join(errs))
    return p


# Covariate scale models.  Each knows how to sample and its second moment E[v^2].

@dataclass(frozen=True)
class ConstantOne:
    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.ones(n)

    def second_moment(self) -> float:
        return 1.0

    def label(self) -> str:
        return "constant"


@dataclass(frozen=True)
class UniformUnit:
    """v ~ Uniform(0, 1]."""

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # Generator.random draws from [0, 1); 1 - u lies in (0, 1].
        return 1.0 - rng.random(n)

    def second_moment(self) -> float:
        return 1.0 / 3.0

    def label(self) -> str:
        return "uniform"


@dataclass(frozen=True)
class LogNormal:
    mu_log: float = 0.0
    sigma_log: float = 0.5

    def __post_init__(self):
        if not (self.sigma_log > 0 and math.isfinite(self.sigma_log) and math.isfinite(self.mu_log)):
            raise ValueError("LogNormal requires finite mu_log and sigma_log > 0")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.exp(self.mu_log + self.sigma_log * rng.standard_normal(n))

    def second_moment(self) -> float:
        return math.exp(2 * self.mu_log + 2 * self.sigma_log**2)

    def label(self) -> str:
        return f"lognormal({self.mu_log:g},{self.sigma_log:g})"


@dataclass(frozen=True)
class Explicit:
    """Empirical scale distribution given by a list of positive samples."""

    samples: tuple[float, ...]

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("Explicit needs a nonempty 1-d list of samples")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError("Explicit samples must be finite and > 0")
        object.__setattr__(self, "samples", tuple(float(s) for s in arr))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(np.asarray(self.samples), size=n, replace=True)

    def second_moment(self) -> float:
        arr = np.asarray(self.samples)
        return float(np.mean(arr**2))

    def label(self) -> str:
        return f"explicit[{len(self.samples)}]"


ScaleModel = ConstantOne | UniformUnit | LogNormal | Explicit


class Scheme(str, Enum):
    ISOTROPIC = "isotropic"
    GRAM = "gram"


@dataclass(frozen=True)
class PerturbationScheme:
    variant: Scheme
    sigma_eta_bar_sq: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Scheme(self.variant))
        if not (self.sigma_eta_bar_sq >= 0 and math.isfinite(self.sigma_eta_bar_sq)):
            raise ValueError("sigma_eta_bar_sq must be finite and >= 0")

    @classmethod
    def from_params(cls, variant, p: HyperParams) -> "PerturbationScheme":
        return cls(Scheme(variant), p.sigma_eta_bar_sq)

    def noise_var(self, v, second_moment: float):
        """Per-coordinate noise variance as a function of scale ``v``.

        ``second_moment`` is the normaliser E[v^2]; population value in the
        asymptotic analysis, empirical mean of v^2 for a realized instance.
        """
        v = np.asarray(v, dtype=float)
        if self.variant is Scheme.ISOTROPIC:
            return np.full_like(v, self.sigma_eta_bar_sq)
        return v**2 / second_moment * self.sigma_eta_bar_sq


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """One synthetic dataset ``y = F x0 + xi`` with ``F = F_tilde diag(v)``."""

    F: np.ndarray
    y: np.ndarray
    x0: np.ndarray
    v: np.ndarray
    sigma_xi: float
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        F, y, x0, v = (np.asarray(a, dtype=np.float64) for a in (self.F, self.y, self.x0, self.v))
        if F.ndim != 2:
            raise ValueError("F must be 2-d")
        M, N = F.shape
        if y.shape != (M,) or x0.shape != (N,) or v.shape != (N,):
            raise ValueError(f"inconsistent shapes F{F.shape} y{y.shape} x0{x0.shape} v{v.shape}")
        for name, a in (("F", F), ("y", y), ("x0", x0), ("v", v)):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} has non-finite entries")
        if np.any(v <= 0):
            raise ValueError("all scales v_i must be positive")
        for name, a in (("F", F), ("y", y), ("x0", x0), ("v", v)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def M(self) -> int:
        return self.F.shape[0]

    @property
    def N(self) -> int:
        return self.F.shape[1]

    @property
    def alpha(self) -> float:
        return self.M / self.N

    @property
    def col_energy(self) -> np.ndarray:
        """Per-column variance profile N*Var(F_{mu i}) = v_i^2."""
        return self.v**2


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    eta: np.ndarray
    variances: np.ndarray
    scheme: PerturbationScheme

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=np.float64)
        var = np.asarray(self.variances, dtype=np.float64)
        if eta.shape != var.shape or eta.ndim != 1:
            raise ValueError("eta and variances must be 1-d of equal length")
        if np.any(var < 0):
            raise ValueError("variances must be >= 0")
        n = var.size
        target = n * self.scheme.sigma_eta_bar_sq
        if abs(var.sum() - target) > 1e-12 * max(target, 1e-300) and not (target == 0 and var.sum() == 0):
            raise ValueError("variances violate the noise budget N*sigma_eta_bar_sq")
        eta.flags.writeable = False
        var.flags.writeable = False
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "variances", var)

    @classmethod
    def zero(cls, n: int) -> "NoiseRealization":
        return cls(np.zeros(n), np.zeros(n), PerturbationScheme(Scheme.ISOTROPIC, 0.0))
