"""Noise-variance allocation, eta draws and the effective-anisotropy probe."""
from __future__ import annotations

import numpy as np

from .core import NoiseRealization, PerturbationScheme, ProblemInstance, Scheme
from .instance import substream

MAX_CONDITION = 1e12


def allocate_variances(scheme: PerturbationScheme, v) -> np.ndarray:
    """Per-coordinate variances; the Gram-based rule normalises by the empirical mean of v^2."""
    v = np.asarray(v, dtype=float)
    if np.any(~(v > 0)):
        raise ValueError("allocate_variances: all v_i must be > 0")
    if scheme.variant is Scheme.ISOTROPIC:
        return np.full(v.shape, scheme.sigma_eta_bar_sq)
    v2 = v**2
    return v2 / np.mean(v2) * scheme.sigma_eta_bar_sq


def draw_eta(variances, seed: int, scheme: PerturbationScheme | None = None) -> NoiseRealization:
    variances = np.asarray(variances, dtype=float)
    if np.any(variances < 0):
        raise ValueError("variances must be >= 0")
    if scheme is None:
        scheme = _infer_scheme(variances)
    z = substream(seed, 0).standard_normal(variances.shape)
    return NoiseRealization(np.sqrt(variances) * z, variances, scheme)


def _infer_scheme(variances):
    mean = float(np.mean(variances)) if variances.size else 0.0
    iso = variances.size == 0 or np.all(variances == variances.flat[0])
    return PerturbationScheme(Scheme.ISOTROPIC if iso else Scheme.GRAM, mean)


def make_noise(instance: ProblemInstance, scheme: PerturbationScheme, seed: int) -> NoiseRealization:
    return draw_eta(allocate_variances(scheme, instance.v), seed, scheme)


def effective_noise_probe(instance: ProblemInstance, scheme: PerturbationScheme,
                          n_draws: int, seed: int) -> np.ndarray:
    """Monte-Carlo per-coordinate std dev of ``(F^T F)^{-1} eta``.

    Diagnostic for small instances with M >= N.
    """
    if instance.M < instance.N:
        raise ValueError("effective_noise_probe needs M >= N so that F^T F is invertible")
    gram = instance.F.T @ instance.F
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise np.linalg.LinAlgError(f"F^T F is numerically singular (cond={cond:.3g})")
    var = allocate_variances(scheme, instance.v)
    eta = np.sqrt(var) * substream(seed, 0).standard_normal((n_draws, instance.N))
    mu = np.linalg.solve(gram, eta.T)
    return mu.std(axis=1, ddof=1)
