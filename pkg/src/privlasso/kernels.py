"""Scalar denoising and privacy kernels.

All functions broadcast over numpy arrays.  Notation: ``sigma_big`` is the
effective variance of the scalar channel, ``lam`` the l1 weight and
``sigma_eta`` the standard deviation of the objective perturbation acting on
the coordinate.
"""
from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtr

SINGULAR_GUARD = 1e-12
_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


class SingularityError(ArithmeticError):
    """``1 - r_hat`` fell below the guard threshold."""

    def __init__(self, msg, m_hat=None, sigma_big=None, sigma_eta=None):
        super().__init__(msg)
        self.m_hat = m_hat
        self.sigma_big = sigma_big
        self.sigma_eta = sigma_eta


def soft_mean(sigma_big, m, lam):
    """Soft threshold ``(m - sgn(m) lam Sigma) 1(|m| > lam Sigma)``."""
    m = np.asarray(m, dtype=float)
    thr = lam * np.asarray(sigma_big, dtype=float)
    return np.where(np.abs(m) > thr, m - np.sign(m) * thr, 0.0)


def soft_var(sigma_big, m, lam):
    """Posterior variance ``Sigma 1(|m| > lam Sigma)``."""
    sigma_big = np.asarray(sigma_big, dtype=float)
    m = np.asarray(m, dtype=float)
    return np.where(np.abs(m) > lam * sigma_big, sigma_big, 0.0)


def _check_sigma_eta(sigma_eta):
    sigma_eta = np.asarray(sigma_eta, dtype=float)
    if np.any(~(sigma_eta > 0)):
        raise ValueError("sigma_eta must be > 0 (sigma_eta = 0 is the divergence case)")
    return sigma_eta


def _standardize(m_hat, sigma_big, lam, sigma_eta):
    """Return (A, B, s, c) with A = (m-c)/s, B = (-m-c)/s, s = Sigma*sigma_eta, c = lam*Sigma."""
    sigma_eta = _check_sigma_eta(sigma_eta)
    m_hat = np.asarray(m_hat, dtype=float)
    sigma_big = np.asarray(sigma_big, dtype=float)
    s = sigma_big * sigma_eta
    c = lam * sigma_big
    return (m_hat - c) / s, (-m_hat - c) / s, s, c


def r_hat(m_hat, sigma_big, lam, sigma_eta):
    """Probability that the perturbed coordinate is active.

    ``0.5 * [erfc((-m+lam S)/(sqrt2 S se)) + erfc((m+lam S)/(sqrt2 S se))]``,
    written with the normal CDF as ``Phi(A) + Phi(B)``.
    """
    A, B, _, _ = _standardize(m_hat, sigma_big, lam, sigma_eta)
    return ndtr(A) + ndtr(B)


def r_hat_complement(m_hat, sigma_big, lam, sigma_eta):
    """``1 - r_hat`` without cancellation, and its logarithm."""
    A, B, s, c = _standardize(np.abs(m_hat), sigma_big, lam, sigma_eta)
    # For m >= 0: 1 - r_hat = Phi(-A) - Phi(B) with B <= -A.
    la, lb = log_ndtr(-A), log_ndtr(B)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_comp = la + np.log1p(-np.exp(lb - la))
    return np.exp(log_comp), log_comp


def _phi(x):
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI)


def r_hat_d1(m_hat, sigma_big, lam, sigma_eta):
    """First derivative of ``r_hat`` in ``m_hat``:
    ``[phi(A) - phi(B)] / s`` with ``s = Sigma * sigma_eta``.
    """
    A, B, s, _ = _standardize(m_hat, sigma_big, lam, sigma_eta)
    return (_phi(A) - _phi(B)) / s


def r_hat_d2(m_hat, sigma_big, lam, sigma_eta):
    A, B, s, _ = _standardize(m_hat, sigma_big, lam, sigma_eta)
    return -(A * _phi(A) + B * _phi(B)) / s**2


def _log_abs_d1(m_hat, sigma_big, lam, sigma_eta):
    A, B, s, c = _standardize(np.abs(m_hat), sigma_big, lam, sigma_eta)
    m = np.abs(np.asarray(m_hat, dtype=float))
    with np.errstate(divide="ignore"):
        return -0.5 * A * A - _LOG_SQRT_2PI + np.log1p(-np.exp(-2.0 * m * c / s**2)) - np.log(s)


def fisher_terms(m_hat, sigma_big, lam, sigma_eta, guard=SINGULAR_GUARD):
    """The three summands of ``R_v`` plus a mask of guarded cells.

    Returns ``(t1, d2, t3, singular)`` where ``t1 = d1^2/(1-r_hat)``,
    ``d2 = r_hat''`` and ``t3 = r_hat/(Sigma sigma_eta)^2``.  ``t1`` is formed
    in log space from the accurate complement; ``singular`` flags cells where
    ``1 - r_hat < guard``.
    """
    m_hat, sigma_big, sigma_eta = np.broadcast_arrays(
        np.asarray(m_hat, float), np.asarray(sigma_big, float), np.asarray(sigma_eta, float))
    comp, log_comp = r_hat_complement(m_hat, sigma_big, lam, sigma_eta)
    log_d1 = _log_abs_d1(m_hat, sigma_big, lam, sigma_eta)
    with np.errstate(invalid="ignore", over="ignore"):
        t1 = np.exp(2.0 * log_d1 - log_comp)
    # d1 vanishes identically at m = 0 (and whenever lam*Sigma = 0).
    t1 = np.where(np.isneginf(log_d1), 0.0, t1)
    d2 = r_hat_d2(m_hat, sigma_big, lam, sigma_eta)
    s = sigma_big * sigma_eta
    t3 = r_hat(m_hat, sigma_big, lam, sigma_eta) / s**2
    return t1, d2, t3, comp < guard


def big_r(m_hat, sigma_big, lam, sigma_eta, guard=SINGULAR_GUARD):
    """Fisher information ``R_v`` of the thresholded output w.r.t. ``m_hat``.

    Raises :class:`SingularityError` if ``1 - r_hat < guard`` anywhere.
    """
    t1, d2, t3, singular = fisher_terms(m_hat, sigma_big, lam, sigma_eta, guard)
    if np.any(singular):
        idx = np.argmax(np.ravel(singular))
        mm, ss, ee = (np.ravel(np.broadcast_to(a, singular.shape))[idx]
                      for a in (np.asarray(m_hat, float), np.asarray(sigma_big, float),
                                np.asarray(sigma_eta, float)))
        raise SingularityError(
            f"1 - r_hat below {guard:g} at m_hat={mm:g}, Sigma={ss:g}, sigma_eta={ee:g}",
            m_hat=mm, sigma_big=ss, sigma_eta=ee)
    out = t1 + d2 + t3
    return out if out.ndim else float(out)
