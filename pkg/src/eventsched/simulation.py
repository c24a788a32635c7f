"""Closed-loop Monte Carlo: plants, local filters, triggers, channel, remote estimators.

Episodes run side by side as a batch. Every random draw comes from its own
counter-based stream keyed by ``(seed, episode, sensor, purpose)``, so an
episode's randomness does not depend on how many episodes share the batch.

Every run starts as if all sensors had just transmitted: the state sits
``N(0, P_bar)`` away from the local estimate, and the remote estimators hold
that estimate with covariance ``P_bar``.

The loop propagates the local error ``x - x_hat_local`` and the remote lag
``x_hat_local - x_hat_remote`` rather than the states themselves. Everything the
trigger and estimator see is a difference of these, and unstable plants would
otherwise overflow within a few hundred steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .filtering import SteadyStateFilter, psd_sqrt
from .trigger import phi_batch

# stream purposes
_INIT, _PROCESS, _MEASURE, _TRIGGER = range(4)


def stream(seed: int, episode: int, sensor: int, purpose: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(episode), int(sensor), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


def h_batch(filt: SteadyStateFilter, P: np.ndarray) -> np.ndarray:
    X = filt.A @ P @ filt.A.T + filt.Q
    return 0.5 * (X + np.swapaxes(X, -1, -2))


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    traces: np.ndarray  # (T, n) realized Tr P_i(k)
    sq_err: np.ndarray  # (T, n) |x_i(k) - x_hat_i(k)|^2
    transmitter: np.ndarray  # (T,)
    seed: int
    episode: int = 0

    @property
    def cost(self) -> float:
        return float(self.traces.sum(axis=1).mean())


@dataclass(frozen=True, eq=False)
class BatchResult:
    traces: np.ndarray  # (E, T, n)
    sq_err: np.ndarray  # (E, T, n)
    transmitter: np.ndarray  # (E, T)
    seed: int
    episodes: np.ndarray

    def episode(self, j: int) -> EpisodeResult:
        return EpisodeResult(self.traces[j], self.sq_err[j], self.transmitter[j], self.seed, int(self.episodes[j]))

    def costs(self) -> np.ndarray:
        return self.traces.sum(axis=2).mean(axis=1)


def _draw_noise(filters, seed, episodes, T):
    out = []
    for i, f in enumerate(filters):
        d, m = f.sys.dim_x, f.sys.dim_y
        Lq = np.linalg.cholesky(f.Q)
        Lr = np.linalg.cholesky(f.sys.R)
        z0, w, v, xi = [], [], [], []
        for e in episodes:
            z0.append(stream(seed, e, i, _INIT).standard_normal(d))
            w.append(stream(seed, e, i, _PROCESS).standard_normal((T, d)))
            v.append(stream(seed, e, i, _MEASURE).standard_normal((T, m)))
            xi.append(stream(seed, e, i, _TRIGGER).random(T))
        out.append(
            {
                "z0": np.array(z0),
                "w": np.array(w) @ Lq.T,
                "v": np.array(v) @ Lr.T,
                "xi": np.array(xi),
            }
        )
    return out


def simulate(
    filters: Sequence[SteadyStateFilter],
    policy,
    T: int,
    seed: int = 0,
    episodes: Sequence[int] | int = 1,
) -> BatchResult:
    """Run a batch of episodes. ``policy`` must provide ``step_batch(k, P_prev)``."""
    if T < 1:
        raise ValueError("horizon must be at least 1")
    filters = tuple(filters)
    ep = np.arange(episodes) if np.isscalar(episodes) else np.asarray(episodes, dtype=int)
    E, n = len(ep), len(filters)
    noise = _draw_noise(filters, seed, ep, T)
    rows = np.arange(E)

    # error coordinates: e = x - x_hat_local, lag = x_hat_local - x_hat_remote
    e, lag, P = [], [], []
    for f, nz in zip(filters, noise):
        d = f.sys.dim_x
        e.append(nz["z0"] @ psd_sqrt(f.P_bar).T)
        lag.append(np.zeros((E, d)))
        P.append(np.broadcast_to(f.P_bar, (E, d, d)).copy())

    traces = np.empty((E, T, n))
    sq_err = np.empty((E, T, n))
    transmitter = np.empty((E, T), dtype=np.int64)

    eps = [None] * n
    for k in range(T):
        for i, f in enumerate(filters):
            A, C, K = f.A, f.sys.C, f.K_bar
            pred_err = e[i] @ A.T + noise[i]["w"][:, k]
            correction = (pred_err @ C.T + noise[i]["v"][:, k]) @ K.T
            eps[i] = lag[i] @ A.T + correction
            e[i] = pred_err - correction
        queues, ah = policy.step_batch(k, P)

        eta = np.empty((E, n), dtype=bool)
        hP = []
        for i, f in enumerate(filters):
            hP.append(h_batch(f, P[i]))
            ph = phi_batch(eps[i], hP[i] - f.P_bar, ah[:, i])
            eta[:, i] = noise[i]["xi"][:, k] > ph

        mu = np.zeros((E, n), dtype=bool)
        gamma = np.zeros((E, n), dtype=bool)
        free = np.ones(E, dtype=bool)
        for pos in range(n):
            s = queues[:, pos]
            mu[rows, s] = free
            fire = free & (eta[rows, s] | (pos == n - 1))
            gamma[rows, s] = fire
            free &= ~fire
        transmitter[:, k] = np.argmax(gamma, axis=1)

        for i, f in enumerate(filters):
            g = gamma[:, i]
            a = ah[:, i][:, None, None]
            held = np.where(mu[:, i][:, None, None], (1.0 - a) * f.P_bar + a * hP[i], hP[i])
            P[i] = np.where(g[:, None, None], f.P_bar, held)
            lag[i] = np.where(g[:, None], 0.0, eps[i])
            traces[:, k, i] = np.trace(P[i], axis1=1, axis2=2)
            sq_err[:, k, i] = np.sum((e[i] + lag[i]) ** 2, axis=1)

    return BatchResult(traces, sq_err, transmitter, int(seed), ep)


def run_episode(filters, policy, T: int, seed: int, episode: int = 0) -> EpisodeResult:
    return simulate(filters, policy, T, seed, [episode]).episode(0)


@dataclass(frozen=True)
class CostSummary:
    mean: float
    stderr: float
    per_sensor: tuple[float, ...]
    sq_err_mean: float
    runs: int
    horizon: int
    single_sample: bool

    def to_dict(self) -> dict:
        return {
            "J": self.mean,
            "stderr": self.stderr,
            "per_sensor_J": list(self.per_sensor),
            "squared_error_J": self.sq_err_mean,
            "runs": self.runs,
            "horizon": self.horizon,
            "single_sample": self.single_sample,
        }


def summarize(result: BatchResult) -> CostSummary:
    costs = result.costs()
    runs = len(costs)
    stderr = 0.0 if runs == 1 else float(costs.std(ddof=1) / np.sqrt(runs))
    return CostSummary(
        mean=float(costs.mean()),
        stderr=stderr,
        per_sensor=tuple(float(v) for v in result.traces.mean(axis=(0, 1))),
        sq_err_mean=float(result.sq_err.sum(axis=2).mean()),
        runs=runs,
        horizon=result.traces.shape[1],
        single_sample=runs == 1,
    )


def monte_carlo_cost(filters, policy, T: int = 1000, runs: int = 500, seed: int = 0, batch: int = 500):
    """Mean and standard error of ``J_ep = (1/T) sum_k sum_i Tr P_i(k)`` across episodes.

    Episodes are processed in chunks of ``batch`` to bound memory.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    parts = [simulate(filters, policy, T, seed, np.arange(s, min(s + batch, runs))) for s in range(0, runs, batch)]
    if len(parts) == 1:
        return summarize(parts[0]), parts[0]
    merged = BatchResult(
        np.concatenate([p.traces for p in parts]),
        np.concatenate([p.sq_err for p in parts]),
        np.concatenate([p.transmitter for p in parts]),
        int(seed),
        np.concatenate([p.episodes for p in parts]),
    )
    return summarize(merged), merged


def periodic_covariance_sequence(filt: SteadyStateFilter, table: Sequence[int], sensor: int, T: int) -> np.ndarray:
    """Deterministic ``P(k)``, ``k < T``, of one sensor under a periodic table."""
    P = np.array(filt.P_bar)[None]
    out = np.empty((T,) + filt.P_bar.shape)
    for k in range(T):
        P = filt.P_bar[None].copy() if table[k % len(table)] == sensor else h_batch(filt, P)
        out[k] = P[0]
    return out


def periodic_cycle_cost(filters: Sequence[SteadyStateFilter], table: Sequence[int]) -> float:
    """Exact average cost of a periodic table (steady cycle, ``k`` from one period on)."""
    table = [int(s) for s in table]
    missing = set(range(len(filters))) - set(table)
    if missing:
        raise ValueError(f"sensors {sorted(missing)} never transmit; the cost diverges")
    p = len(table)
    total = 0.0
    for i, f in enumerate(filters):
        seq = periodic_covariance_sequence(f, table, i, 2 * p)
        total += float(np.trace(seq[p:], axis1=1, axis2=2).sum()) / p
    return total
