"""Stochastic event trigger and its closed-form firing probability.

A sensor with innovation ``eps`` and predicted innovation covariance
``Sigma`` fires (``eta = 1``) when a uniform draw exceeds
``phi(eps, alpha * Sigma) = exp(-eps' (alpha Sigma)^+ eps / 2)``. Because
the acceptance probability is a Gaussian kernel, holding back keeps the
conditional innovation Gaussian with covariance ``alpha/(1+alpha) Sigma``
and the firing probability is ``1 - (alpha/(1+alpha))**(rank/2)``.

Internally the intensity is mostly handled as ``alpha_hat = alpha/(1+alpha)``
in ``[0, 1]`` so that ``alpha = 0`` and ``alpha = inf`` are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_TOL = 1e-9
PINV_TOL = 1e-10
# eigenvalues below PINV_TOL * s_max are rounding noise, and a Gaussian draw from them
# strays off the range by up to about sqrt(PINV_TOL * s_max); anything well beyond is real
RANGE_TOL = 1e-4


def alpha_hat(alpha) -> np.ndarray | float:
    a = np.asarray(alpha, dtype=float)
    if np.any(a < 0):
        raise ValueError("alpha must be nonnegative")
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(a), 1.0, a / (1.0 + a))
    return float(out) if out.ndim == 0 else out


def alpha_from_hat(ah) -> np.ndarray | float:
    a = np.asarray(ah, dtype=float)
    if np.any((a < 0) | (a > 1)):
        raise ValueError("alpha_hat must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(a >= 1.0, np.inf, a / (1.0 - a))
    return float(out) if out.ndim == 0 else out


def numerical_rank(Sigma) -> int:
    s = np.linalg.svd(np.atleast_2d(np.asarray(Sigma, dtype=float)), compute_uv=False)
    if s.size == 0:
        return 0
    return int(np.sum(s > RANK_TOL * max(s[0], 1.0)))


def batch_rank(Sigma: np.ndarray) -> np.ndarray:
    """:func:`numerical_rank` over a stack of shape ``(..., d, d)``."""
    s = np.linalg.svd(Sigma, compute_uv=False)
    thresh = RANK_TOL * np.maximum(s[..., :1], 1.0)
    return np.sum(s > thresh, axis=-1)


@dataclass(frozen=True)
class TriggerParams:
    alpha: float
    rank_r: int

    @property
    def alpha_hat(self) -> float:
        return alpha_hat(self.alpha)

    @property
    def beta(self) -> float:
        """Probability of holding back, ``alpha_hat ** (r/2)``."""
        return self.alpha_hat ** (self.rank_r / 2.0)


@dataclass(frozen=True)
class TriggerDecision:
    eta: bool
    xi: float
    phi_value: float


def _quad_form(z: np.ndarray, Pi: np.ndarray) -> float:
    """``z' Pi^+ z``, or ``inf`` when ``z`` leaves the range of a singular ``Pi``."""
    U, s, Vt = np.linalg.svd(Pi)
    if s.size == 0 or s[0] <= 0:
        return 0.0 if not np.any(z) else np.inf
    keep = s > PINV_TOL * s[0]
    coords = U[:, keep].T @ z
    resid = z - U[:, keep] @ coords
    if np.linalg.norm(resid) > RANGE_TOL * np.sqrt(s[0]):
        return np.inf
    return float(np.sum(coords**2 / s[keep]))


def phi(z, Pi) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    Pi = np.atleast_2d(np.asarray(Pi, dtype=float))
    if Pi.shape != (z.size, z.size):
        raise ValueError("dimension mismatch between z and Pi")
    if not np.any(z):
        return 1.0
    q = _quad_form(z, Pi)
    return 0.0 if np.isinf(q) else float(np.exp(-0.5 * q))


def phi_scaled(eps, Sigma, alpha) -> float:
    """``phi(eps, alpha * Sigma)`` honouring ``alpha`` in ``{0, inf}`` exactly."""
    if np.isinf(alpha):
        return 1.0
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    if alpha == 0:
        return 1.0 if not np.any(eps) else 0.0
    return phi(eps, alpha * np.asarray(Sigma, dtype=float))


def draw_eta(rng: np.random.Generator, epsilon, alpha: float, Sigma) -> TriggerDecision:
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    xi = float(rng.random())
    ph = phi_scaled(epsilon, Sigma, alpha)
    return TriggerDecision(eta=xi > ph, xi=xi, phi_value=ph)


def eta_probability(params: TriggerParams) -> float:
    return 1.0 - params.beta


def phi_batch(eps: np.ndarray, Sigma: np.ndarray, ah: np.ndarray) -> np.ndarray:
    """Vectorized ``phi(eps, alpha Sigma)`` for stacks ``eps (E, d)``, ``Sigma (E, d, d)``.

    ``ah`` is ``alpha_hat`` per row.
    """
    U, s, _ = np.linalg.svd(Sigma)
    keep = s > PINV_TOL * np.maximum(s[:, :1], 1e-300)
    coords = np.einsum("eij,ei->ej", U, eps)
    inv_s = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    quad = np.sum(coords**2 * inv_s, axis=1)
    resid = eps - np.einsum("eij,ej->ei", U, np.where(keep, coords, 0.0))
    eps_norm = np.linalg.norm(eps, axis=1)
    out_of_range = np.linalg.norm(resid, axis=1) > RANGE_TOL * np.sqrt(s[:, 0])
    zero = eps_norm == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(ah > 0, (1.0 - ah) / np.where(ah > 0, ah, 1.0), np.inf)
        val = np.exp(-0.5 * quad * scale)
    val = np.where(out_of_range, 0.0, val)
    val = np.where(ah >= 1.0, 1.0, val)
    val = np.where(ah <= 0.0, 0.0, val)
    return np.where(zero, 1.0, val)
