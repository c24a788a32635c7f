"""Channel resolution, time-based (periodic) scheduling and the greedy scheduler.

Sensors are indexed from 0 in the Python API. A queue is a tuple listing
sensor indices in priority order; per-sensor trigger intensities ``alphas``
are always indexed by sensor, and the entry of the last sensor in the queue
is ignored (it transmits whenever the channel is still free).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .estimator import map_h
from .filtering import SteadyStateFilter
from .optimize import golden_section
from .trigger import alpha_from_hat, alpha_hat, batch_rank, numerical_rank

Queue = tuple[int, ...]


def check_queue(queue: Sequence[int], n: int) -> Queue:
    q = tuple(int(i) for i in queue)
    if sorted(q) != list(range(n)):
        raise ValueError(f"{q} is not a permutation of 0..{n - 1}")
    return q


@dataclass(frozen=True, eq=False)
class TransmissionOutcome:
    eta: np.ndarray
    mu: np.ndarray
    gamma: np.ndarray
    transmitter: int


def resolve_channel(queue: Sequence[int], eta_draws: Sequence) -> TransmissionOutcome:
    """Walk the queue; the first sensor whose trigger fired takes the channel.

    The last sensor in the queue transmits whenever nobody before it did, so
    there is always exactly one transmitter.
    """
    q = check_queue(queue, len(queue))
    n = len(q)
    eta = np.array([bool(e) if e is not None else False for e in eta_draws], dtype=bool)
    if eta.shape != (n,):
        raise ValueError("need one eta entry per sensor")
    mu = np.zeros(n, dtype=bool)
    gamma = np.zeros(n, dtype=bool)
    free = True
    for pos, s in enumerate(q):
        mu[s] = free
        if free and (pos == n - 1 or eta[s]):
            gamma[s] = True
            free = False
    return TransmissionOutcome(eta=eta, mu=mu, gamma=gamma, transmitter=int(np.flatnonzero(gamma)[0]))


# ----------------------------------------------------------------------------
# time-based schedules


@dataclass(frozen=True)
class PeriodicPolicy:
    """Repeating transmission table, e.g. ``(1, 0, 0)`` for sensor 1 then sensor 0 twice."""

    table: tuple[int, ...]
    n: int

    def __post_init__(self):
        table = tuple(int(i) for i in self.table)
        if not table:
            raise ValueError("periodic table must be nonempty")
        if any(i < 0 or i >= self.n for i in table):
            raise ValueError(f"periodic table entries must lie in 0..{self.n - 1}")
        object.__setattr__(self, "table", table)

    def step(self, k: int, P_prev=None) -> tuple[Queue, np.ndarray]:
        return periodic_step(self, k)

    def step_batch(self, k: int, P_prev):
        E = P_prev[0].shape[0]
        queue, alphas = periodic_step(self, k)
        return np.tile(queue, (E, 1)), np.tile(alpha_hat(alphas), (E, 1))


def periodic_step(policy: PeriodicPolicy, k: int) -> tuple[Queue, np.ndarray]:
    """Scheduled sensor goes first with alpha 0; everybody else gets alpha inf."""
    s = policy.table[k % len(policy.table)]
    queue = (s,) + tuple(i for i in range(policy.n) if i != s)
    alphas = np.full(policy.n, np.inf)
    alphas[s] = 0.0
    return queue, alphas


# ----------------------------------------------------------------------------
# greedy schedule


def _traces(filters: Sequence[SteadyStateFilter], P_prev: Sequence[np.ndarray]):
    pbar = np.array([np.trace(f.P_bar) for f in filters])
    htr = np.array([np.trace(map_h(f, P)) for f, P in zip(filters, P_prev)])
    return pbar, htr


def _ranks(filters, P_prev) -> np.ndarray:
    return np.array([numerical_rank(map_h(f, P) - f.P_bar) for f, P in zip(filters, P_prev)])


def greedy_keys(filters: Sequence[SteadyStateFilter], P_prev: Sequence[np.ndarray]) -> np.ndarray:
    """``Tr[h_i(P_i) - P_bar_i]`` per sensor."""
    pbar, htr = _traces(filters, P_prev)
    return htr - pbar


def greedy_order(filters: Sequence[SteadyStateFilter], P_prev: Sequence[np.ndarray]) -> Queue:
    """Sort sensors by ``Tr[h_i(P_i) - P_bar_i]`` descending, ties by index.

    The ordering is only guaranteed optimal when all innovation ranks agree;
    with unequal ranks the same rule is applied and a warning is emitted.
    """
    ranks = _ranks(filters, P_prev)
    if len(set(ranks.tolist())) > 1:
        warnings.warn(f"unequal innovation ranks {ranks.tolist()}; greedy order is heuristic")
    keys = greedy_keys(filters, P_prev)
    return tuple(int(i) for i in np.argsort(-keys, kind="stable"))


def one_step_cost_from_traces(pbar_tr, h_tr, ranks, ah) -> np.ndarray:
    """Expected ``sum_i Tr P_i(k)`` with everything listed in queue order.

    ``pbar_tr``, ``h_tr``, ``ranks`` have length ``n``; ``ah`` holds
    ``alpha_hat`` for the first ``n - 1`` queue positions along its last axis
    and may carry leading batch axes.
    """
    pbar_tr = np.asarray(pbar_tr, dtype=float)
    h_tr = np.asarray(h_tr, dtype=float)
    n = pbar_tr.size
    ah = np.asarray(ah, dtype=float)
    reach = np.ones(ah.shape[:-1]) if ah.ndim else np.ones(())
    total = np.zeros_like(reach)
    for m in range(n):
        if m == n - 1:
            total = total + (1.0 - reach) * h_tr[m] + reach * pbar_tr[m]
            break
        a = ah[..., m]
        beta = a ** (ranks[m] / 2.0)
        hold = (1.0 - a) * pbar_tr[m] + a * h_tr[m]
        total = total + (1.0 - reach) * h_tr[m] + reach * ((1.0 - beta) * pbar_tr[m] + beta * hold)
        reach = reach * beta
    return total


def expected_one_step_cost(
    queue: Sequence[int],
    filters: Sequence[SteadyStateFilter],
    P_prev: Sequence[np.ndarray],
    alphas,
) -> float:
    q = check_queue(queue, len(filters))
    pbar, htr = _traces(filters, P_prev)
    ranks = _ranks(filters, P_prev)
    ah = alpha_hat(np.asarray(alphas, dtype=float))
    ah = np.atleast_1d(ah)
    idx = list(q)
    return float(one_step_cost_from_traces(pbar[idx], htr[idx], ranks[idx], ah[idx][: len(q) - 1]))


def greedy_last_pair_alpha(lam: float, ell: int) -> float:
    """Optimal ``alpha_hat`` of the second-to-last sensor, ``min(1, ell*lam/(ell+2))``.

    ``lam`` is the ratio of the last sensor's ``Tr[h - P_bar]`` to the
    second-to-last one's.
    """
    if lam <= 0 or ell <= 0:
        raise ValueError("lambda and ell must be positive")
    return min(1.0, ell * lam / (ell + 2.0))


def pair_alpha_hat(key_first, key_last, rank_first):
    """Closed-form ``alpha_hat`` for a two-sensor queue, broadcasting over arrays.

    Degenerate inputs are mapped to their limits: a first sensor with no
    innovation (``key_first == 0`` or rank 0) never needs to send, so its
    ``alpha_hat`` is 1.
    """
    kf = np.asarray(key_first, dtype=float)
    kl = np.asarray(key_last, dtype=float)
    r = np.asarray(rank_first, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.minimum(1.0, r * kl / ((r + 2.0) * kf))
    out = np.where((kf > 0) & (r > 0), val, 1.0)
    out = np.clip(np.nan_to_num(out, nan=1.0), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _coordinate_descent(cost, x0: np.ndarray, tol: float = 1e-6, ftol: float = 1e-9, max_sweeps: int = 200):
    x = np.array(x0, dtype=float)
    fx = cost(x)
    for _ in range(max_sweeps):
        f_start = fx
        for j in range(x.size):
            def f1(v, j=j):
                y = x.copy()
                y[j] = v
                return cost(y)

            v, fv = golden_section(f1, 0.0, 1.0, tol)
            if fv <= fx:
                x[j], fx = v, fv
        if f_start - fx < ftol:
            break
    return x, fx


def greedy_alpha_hats_numeric(pbar_tr, h_tr, ranks, rng=None, restarts: int = 3):
    """Coordinate descent with golden section over ``alpha_hat`` in queue order."""
    n = len(pbar_tr)
    if n == 1:
        return np.zeros(0), float(pbar_tr[0])
    rng = np.random.default_rng(0) if rng is None else rng

    def cost(ah):
        return float(one_step_cost_from_traces(pbar_tr, h_tr, ranks, ah))

    starts = [np.full(n - 1, 0.5)] + [rng.random(n - 1) for _ in range(restarts)]
    best = None
    for x0 in starts:
        x, fx = _coordinate_descent(cost, x0)
        if best is None or fx < best[1]:
            best = (x, fx)
    return best


def greedy_alphas(
    queue: Sequence[int],
    filters: Sequence[SteadyStateFilter],
    P_prev: Sequence[np.ndarray],
    method: str = "auto",
    rng=None,
) -> np.ndarray:
    """Per-sensor trigger intensities ``alpha`` minimizing the one-step cost.

    ``method="auto"`` uses the closed form for two sensors and the numeric
    search otherwise. With two sensors the one-step cost only involves the
    first sensor's rank, so the closed form needs no rank condition. The last
    sensor in the queue gets ``inf``.
    """
    q = check_queue(queue, len(filters))
    n = len(q)
    pbar, htr = _traces(filters, P_prev)
    ranks = _ranks(filters, P_prev)
    idx = list(q)
    alphas = np.full(n, np.inf)
    if n == 1:
        return alphas
    use_closed = method == "closed_form" or (method == "auto" and n == 2)
    if use_closed:
        if n != 2:
            raise ValueError("closed form only applies to two sensors")
        keys = (htr - pbar)[idx]
        alphas[idx[0]] = alpha_from_hat(pair_alpha_hat(keys[0], keys[1], ranks[idx[0]]))
        return alphas
    ah, _ = greedy_alpha_hats_numeric(pbar[idx], htr[idx], ranks[idx], rng=rng)
    for pos, s in enumerate(idx[:-1]):
        alphas[s] = alpha_from_hat(ah[pos])
    return alphas


@dataclass(frozen=True, eq=False)
class GreedyPolicy:
    """Recompute queue and intensities every slot from the broadcast covariances."""

    filters: tuple[SteadyStateFilter, ...]
    method: str = "auto"

    def step(self, k: int, P_prev: Sequence[np.ndarray]) -> tuple[Queue, np.ndarray]:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            queue = greedy_order(self.filters, P_prev)
        return queue, greedy_alphas(queue, self.filters, P_prev, method=self.method)

    def step_batch(self, k: int, P_prev):
        """Vectorized over episodes: ``P_prev[i]`` has shape ``(E, d_i, d_i)``.

        Returns ``(queues (E, n), alpha_hats (E, n))``; the last queue entry
        gets ``alpha_hat = 1``.
        """
        n = len(self.filters)
        hP = [f.A @ P @ f.A.T + f.Q for f, P in zip(self.filters, P_prev)]
        pbar = np.array([np.trace(f.P_bar) for f in self.filters])
        htr = np.stack([np.trace(X, axis1=1, axis2=2) for X in hP], axis=1)
        ranks = np.stack([batch_rank(X - f.P_bar) for f, X in zip(self.filters, hP)], axis=1)
        keys = htr - pbar
        queues = np.argsort(-keys, axis=1, kind="stable")
        E = queues.shape[0]
        ah = np.ones((E, n))
        if n == 1:
            return queues, ah
        rows = np.arange(E)
        if n == 2 and self.method != "numeric":
            first, last = queues[:, 0], queues[:, 1]
            ah[rows, first] = pair_alpha_hat(keys[rows, first], keys[rows, last], ranks[rows, first])
            return queues, ah
        for e in range(E):
            q = queues[e]
            x, _ = greedy_alpha_hats_numeric(pbar[q], htr[e, q], ranks[e, q])
            ah[e, q[:-1]] = x
        return queues, ah
