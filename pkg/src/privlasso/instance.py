"""Seeded synthetic instances.

Every component draws from its own substream of the instance seed, so the
design, scales, signal and observation noise can be reproduced independently:

    stream 0: scales v        stream 2: signal x0
    stream 1: design F_tilde  stream 3: observation noise xi

A substream is ``PCG64(SeedSequence(seed, spawn_key=(stream,)))``.
"""
from __future__ import annotations

import numpy as np

from .core import HyperParams, ProblemInstance, check_params

STREAM_SCALES, STREAM_DESIGN, STREAM_SIGNAL, STREAM_OBS_NOISE = 0, 1, 2, 3
STREAM_ETA, STREAM_AMP_INIT = 4, 5


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit child seed, used where an API takes a plain seed."""
    return int(np.random.SeedSequence(int(seed), spawn_key=key).generate_state(1, np.uint64)[0])


def n_rows(alpha: float, n: int) -> int:
    # Python's round() is round-half-to-even.
    return int(round(alpha * n))


def sample_scales(model, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return model.sample(substream(seed, STREAM_SCALES), n)


def generate_instance(p: HyperParams, model, n: int, seed: int) -> ProblemInstance:
    check_params(p, allow_null_signal=True)
    if n < 1:
        raise ValueError("n must be >= 1")
    m = n_rows(p.alpha, n)
    if m < 1:
        raise ValueError(f"round(alpha*n) = {m} < 1")
    v = sample_scales(model, n, seed)
    f_tilde = substream(seed, STREAM_DESIGN).standard_normal((m, n)) / np.sqrt(n)
    F = f_tilde * v
    rng = substream(seed, STREAM_SIGNAL)
    support = rng.random(n) < p.rho
    x0 = np.where(support, rng.standard_normal(n), 0.0)
    y = F @ x0
    if p.sigma_xi > 0:
        y = y + p.sigma_xi * substream(seed, STREAM_OBS_NOISE).standard_normal(m)
    meta = {
        "alpha": p.alpha, "rho": p.rho, "sigma_xi": p.sigma_xi,
        "scale_model": model.label(), "N": n, "M": m, "seed": int(seed),
    }
    return ProblemInstance(F=F, y=y, x0=x0, v=v, sigma_xi=p.sigma_xi, seed=int(seed), meta=meta)
