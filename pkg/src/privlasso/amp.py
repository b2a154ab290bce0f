"""AMP for the perturbed LASSO under heterogeneous column scales.

The per-coordinate quantities that the iteration divides by are the column
energies ``w_i = N * Var(F_{mu i}) = v_i^2`` (``F = F_tilde diag(v)``), so that
``Sigma_i = (1 + s_theta) / (alpha w_i)`` is the inverse of the column's
squared norm divided by ``1 + s_theta``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .core import HyperParams, NoiseRealization, ProblemInstance
from .instance import substream
from .kernels import soft_mean, soft_var


class Status(str, enum.Enum):
    RUNNING = "running"
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iter"
    DIVERGED = "diverged"


@dataclass(frozen=True)
class AmpConfig:
    max_iter: int = 2000
    tol: float = 1e-8
    damping: float = 0.0
    divergence_norm: float = 1e8
    init_seed: int = 0
    # "scalar": Onsager term g_out * s_theta.  "elementwise": g_out * ((F o F) s).
    # "none": no correction (naive iterative thresholding, for regression tests).
    onsager: str = "scalar"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not self.divergence_norm > 0:
            raise ValueError("divergence_norm must be > 0")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must lie in [0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.onsager not in ("scalar", "elementwise", "none"):
            raise ValueError(f"unknown onsager mode {self.onsager!r}")


@dataclass
class AmpState:
    x_hat: np.ndarray
    s: np.ndarray
    g_out: np.ndarray
    theta_hat: np.ndarray
    s_theta: float = 0.0
    iteration: int = 0
    status: Status = Status.RUNNING
    max_change: float = float("inf")


@dataclass
class AmpTrace:
    iteration: int
    mse: float
    gen_error: float
    rho_hat: float
    s_theta: float
    max_change: float


@dataclass
class _Workspace:
    """Iteration-invariant data derived from one instance."""

    F: np.ndarray
    y: np.ndarray
    w: np.ndarray
    alpha: float
    F_sq: np.ndarray | None = field(default=None)


def _workspace(instance: ProblemInstance, config: AmpConfig) -> _Workspace:
    ws = _Workspace(instance.F, instance.y, instance.col_energy, instance.alpha)
    if config.onsager == "elementwise":
        ws.F_sq = instance.F * instance.F
    return ws


def amp_init(instance: ProblemInstance, config: AmpConfig) -> AmpState:
    rng = substream(config.init_seed, 0)
    x = rng.standard_normal(instance.N)
    s = rng.random(instance.N)
    return AmpState(x_hat=x, s=s, g_out=np.zeros(instance.M), theta_hat=np.zeros(instance.M))


def rho_hat(state: AmpState) -> float:
    x = state.x_hat
    return float(np.count_nonzero(x)) / x.size if x.size else 0.0


def _step(state: AmpState, ws: _Workspace, eta: np.ndarray, lam: float, config: AmpConfig) -> AmpState:
    x, s, g_prev = state.x_hat, state.s, state.g_out
    N = x.size
    s_theta = float(ws.w @ s) / N
    if config.onsager == "scalar":
        theta = ws.F @ x - g_prev * s_theta
    elif config.onsager == "elementwise":
        theta = ws.F @ x - g_prev * (ws.F_sq @ s)
    else:
        theta = ws.F @ x
    g = (ws.y - theta) / (1.0 + s_theta)
    sigma = (1.0 + s_theta) / (ws.alpha * ws.w)
    m = sigma * (ws.F.T @ g + ws.alpha * x * ws.w / (1.0 + s_theta))
    u = m - eta * sigma
    x_new = soft_mean(sigma, u, lam)
    s_new = soft_var(sigma, u, lam)
    if config.damping:
        d = config.damping
        x_new = (1 - d) * x_new + d * x
        s_new = (1 - d) * s_new + d * s
    with np.errstate(invalid="ignore", over="ignore"):
        change = float(np.max(np.abs(x_new - x) / (1.0 + np.abs(x_new)))) if N else 0.0
    it = state.iteration + 1
    finite = np.all(np.isfinite(x_new)) and np.all(np.isfinite(s_new)) and np.all(np.isfinite(g))
    if not finite or (N and np.max(np.abs(x_new)) > config.divergence_norm):
        status = Status.DIVERGED
    elif change < config.tol:
        status = Status.CONVERGED
    elif it >= config.max_iter:
        status = Status.MAX_ITERATIONS
    else:
        status = Status.RUNNING
    return AmpState(x_hat=x_new, s=s_new, g_out=g, theta_hat=theta, s_theta=s_theta,
                    iteration=it, status=status, max_change=change)


def amp_step(state: AmpState, instance: ProblemInstance, eta: NoiseRealization,
             p: HyperParams, config: AmpConfig) -> AmpState:
    """One sweep of the AMP recursion."""
    if state.status is not Status.RUNNING:
        raise ValueError(f"amp_step called on a terminal state ({state.status.value})")
    return _step(state, _workspace(instance, config), _eta_vector(eta, instance.N), p.lam, config)


def _eta_vector(eta, n):
    if eta is None:
        return np.zeros(n)
    vec = eta.eta if isinstance(eta, NoiseRealization) else np.asarray(eta, dtype=float)
    if vec.shape != (n,):
        raise ValueError(f"eta has shape {vec.shape}, expected ({n},)")
    return vec


def generalization_error(instance: ProblemInstance, x_hat: np.ndarray) -> float:
    """``E[(f_new^T (x0 - x_hat))^2] + sigma_xi^2`` for a fresh row of F."""
    d = instance.x0 - x_hat
    return float(np.mean(instance.col_energy * d * d)) + instance.sigma_xi**2


def amp_run(instance: ProblemInstance, eta, p: HyperParams, config: AmpConfig = AmpConfig(),
            state: AmpState | None = None, trace: bool = True):
    """Iterate to a terminal status; returns ``(state, trajectory)``."""
    ws = _workspace(instance, config)
    eta_vec = _eta_vector(eta, instance.N)
    if state is None:
        state = amp_init(instance, config)
    elif state.status is not Status.RUNNING:
        state = replace(state, status=Status.RUNNING)
    trajectory: list[AmpTrace] = []
    while state.status is Status.RUNNING:
        state = _step(state, ws, eta_vec, p.lam, config)
        if trace:
            with np.errstate(over="ignore", invalid="ignore"):
                d = instance.x0 - state.x_hat
                trajectory.append(AmpTrace(
                    iteration=state.iteration,
                    mse=float(np.mean(d * d)),
                    gen_error=generalization_error(instance, state.x_hat),
                    rho_hat=rho_hat(state),
                    s_theta=state.s_theta,
                    max_change=state.max_change,
                ))
    return state, trajectory
