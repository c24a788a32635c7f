"""Remote MMSE estimator and the covariance maps h, g, t."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filtering import SteadyStateFilter
from .model import LtiSystem
from .trigger import alpha_hat

PSD_TOL = 1e-10


class InvariantViolation(RuntimeError):
    pass


def _sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def map_h(sys: LtiSystem | SteadyStateFilter, X) -> np.ndarray:
    """``A X A' + Q``; accepts a system or a filter (uses its system)."""
    sys = getattr(sys, "sys", sys)
    return _sym(sys.A @ np.asarray(X, dtype=float) @ sys.A.T + sys.Q)


def map_t(filt: SteadyStateFilter, X, alpha) -> np.ndarray:
    """Covariance after holding back while the channel was free."""
    ah = alpha_hat(alpha)
    return (1.0 - ah) * filt.P_bar + ah * map_h(filt, X)


def map_g(filt: SteadyStateFilter, X, alpha) -> np.ndarray:
    ah = alpha_hat(alpha)
    A = filt.sys.A
    return ah * _sym(A @ np.asarray(X, dtype=float) @ A.T + map_h(filt, filt.P_bar) - filt.P_bar)


def sigma_pred(filt: SteadyStateFilter, P_prev) -> np.ndarray:
    """Covariance of the innovation ``x_hat_local(k) - A x_hat(k-1)``."""
    S = map_h(filt, P_prev) - filt.P_bar
    lo = np.linalg.eigvalsh(S).min()
    if lo < -PSD_TOL * max(1.0, float(np.abs(S).max())):
        raise InvariantViolation(f"predicted innovation covariance is indefinite (min eig {lo:.3g})")
    return S


@dataclass(frozen=True)
class CovMaps:
    """h, g, t bound to one steady-state filter."""

    filt: SteadyStateFilter

    @property
    def P_bar(self) -> np.ndarray:
        return self.filt.P_bar

    def h(self, X) -> np.ndarray:
        return map_h(self.filt, X)

    def t(self, X, alpha) -> np.ndarray:
        return map_t(self.filt, X, alpha)

    def g(self, X, alpha) -> np.ndarray:
        return map_g(self.filt, X, alpha)

    def sigma(self, P_prev) -> np.ndarray:
        return sigma_pred(self.filt, P_prev)

    def h_iterates(self, count: int) -> list[np.ndarray]:
        """``[P_bar, h(P_bar), ..., h^count(P_bar)]``."""
        out = [np.array(self.filt.P_bar)]
        for _ in range(count):
            out.append(self.h(out[-1]))
        return out


@dataclass(frozen=True, eq=False)
class RemoteEstimate:
    x_hat: np.ndarray
    P: np.ndarray
    tau: int = 0
    k: int = 0


def remote_update(
    filt: SteadyStateFilter,
    prev: RemoteEstimate,
    gamma: bool,
    mu: bool,
    alpha=np.inf,
    payload=None,
) -> RemoteEstimate:
    """Advance the remote estimate by one slot given the channel outcome.

    ``payload`` is the sensor's local estimate and must be given exactly when
    ``gamma`` is true.
    """
    if gamma and not mu:
        raise ValueError("gamma=1 requires mu=1")
    if gamma != (payload is not None):
        raise ValueError("payload must be present iff gamma=1")
    k = prev.k + 1
    if gamma:
        return RemoteEstimate(np.asarray(payload, dtype=float).copy(), np.array(filt.P_bar), 0, k)
    x_pred = filt.sys.A @ prev.x_hat
    P = map_h(filt, prev.P) if not mu else map_t(filt, prev.P, alpha)
    return RemoteEstimate(x_pred, P, prev.tau + 1, k)
