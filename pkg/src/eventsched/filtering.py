"""Steady-state local Kalman filtering and the Riccati fixed point."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LtiSystem

DIVERGENCE_TRACE = 1e12


class DetectabilityError(RuntimeError):
    """The Riccati iteration diverged or failed to converge."""


def riccati_map(sys: LtiSystem, P: np.ndarray) -> np.ndarray:
    """One measurement-update/prediction cycle of the posterior covariance."""
    M = sys.A @ P @ sys.A.T + sys.Q
    S = sys.C @ M @ sys.C.T + sys.R
    K = np.linalg.solve(S, sys.C @ M).T
    P_next = M - K @ sys.C @ M
    return 0.5 * (P_next + P_next.T)


@dataclass(frozen=True, eq=False)
class SteadyStateFilter:
    sys: LtiSystem
    P_bar: np.ndarray
    M_bar: np.ndarray
    K_bar: np.ndarray
    iterations: int = 0

    @property
    def A(self) -> np.ndarray:
        return self.sys.A

    @property
    def Q(self) -> np.ndarray:
        return self.sys.Q

    def residual(self) -> float:
        return float(np.linalg.norm(riccati_map(self.sys, self.P_bar) - self.P_bar))


@dataclass(frozen=True, eq=False)
class LocalEstimate:
    x_hat_local: np.ndarray
    k: int = 0


def solve_dare(sys: LtiSystem, tol: float = 1e-10, max_iter: int = 10_000) -> SteadyStateFilter:
    """Iterate the Riccati map from ``Pi0`` until the Frobenius step is below ``tol``.

    Raises :class:`DetectabilityError` when the trace exceeds 1e12 or the
    iteration budget runs out.
    """
    P = np.array(sys.Pi0 if sys.Pi0 is not None else sys.Q, dtype=float)
    for it in range(1, max_iter + 1):
        P_next = riccati_map(sys, P)
        tr = np.trace(P_next)
        if not np.isfinite(tr) or tr > DIVERGENCE_TRACE:
            raise DetectabilityError(
                f"Riccati iteration diverged (trace {tr:.3g} after {it} iterations)"
            )
        step = np.linalg.norm(P_next - P)
        P = P_next
        if step < tol:
            break
    else:
        raise DetectabilityError(f"Riccati iteration did not converge in {max_iter} iterations")
    M = sys.A @ P @ sys.A.T + sys.Q
    M = 0.5 * (M + M.T)
    K = np.linalg.solve(sys.C @ M @ sys.C.T + sys.R, sys.C @ M).T
    for arr in (P, M, K):
        arr.setflags(write=False)
    return SteadyStateFilter(sys=sys, P_bar=P, M_bar=M, K_bar=K, iterations=it)


def local_filter_step(filt: SteadyStateFilter, prev: LocalEstimate, y) -> LocalEstimate:
    A, C = filt.sys.A, filt.sys.C
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x_prev = np.asarray(prev.x_hat_local, dtype=float)
    if y.shape != (C.shape[0],) or x_prev.shape != (A.shape[0],):
        raise ValueError("dimension mismatch in local_filter_step")
    x_pred = A @ x_prev
    return LocalEstimate(x_pred + filt.K_bar @ (y - C @ x_pred), prev.k + 1)


def psd_sqrt(X: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (negative eigenvalues clipped)."""
    w, V = np.linalg.eigh(0.5 * (X + X.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def simulate_local_filter(filt: SteadyStateFilter, T: int, rng: np.random.Generator):
    """Run plant and steady-state filter for ``T`` steps.

    The filter starts at steady state: ``x(0) = x_hat(0) + e`` with
    ``e ~ N(0, P_bar)`` and ``x_hat(0) ~ N(0, Pi0)``. Returns ``(x, x_hat)``,
    each of shape ``(T + 1, dim_x)``.
    """
    sys = filt.sys
    n, m = sys.dim_x, sys.dim_y
    x = np.empty((T + 1, n))
    xh = np.empty((T + 1, n))
    xh[0] = psd_sqrt(sys.Pi0) @ rng.standard_normal(n)
    x[0] = xh[0] + psd_sqrt(filt.P_bar) @ rng.standard_normal(n)
    w = rng.standard_normal((T, n)) @ np.linalg.cholesky(sys.Q).T
    v = rng.standard_normal((T, m)) @ np.linalg.cholesky(sys.R).T
    A, C, K = sys.A, sys.C, filt.K_bar
    for k in range(T):
        x[k + 1] = A @ x[k] + w[k]
        y = C @ x[k + 1] + v[k]
        pred = A @ xh[k]
        xh[k + 1] = pred + K @ (y - C @ pred)
    return x, xh


def local_innovations(filt: SteadyStateFilter, T: int, rng: np.random.Generator) -> np.ndarray:
    """``delta(k) = x_hat(k) - A x_hat(k-1)`` for ``k = 1..T``, shape ``(T, dim_x)``.

    Runs on the estimation error ``e = x - x_hat`` instead of the state, so
    long horizons stay finite for unstable plants.
    """
    sys = filt.sys
    n, m = sys.dim_x, sys.dim_y
    e = psd_sqrt(filt.P_bar) @ rng.standard_normal(n)
    w = rng.standard_normal((T, n)) @ np.linalg.cholesky(sys.Q).T
    v = rng.standard_normal((T, m)) @ np.linalg.cholesky(sys.R).T
    A, C, K = sys.A, sys.C, filt.K_bar
    out = np.empty((T, n))
    for k in range(T):
        pred = A @ e + w[k]
        out[k] = K @ (C @ pred + v[k])
        e = pred - out[k]
    return out
