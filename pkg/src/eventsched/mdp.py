"""Average-cost MDP over discretized remote covariances.

Each sensor's remote covariance is kept as a coefficient vector over the
iterates ``h^0(P_bar), ..., h^D(P_bar)``. Because ``t`` is affine and ``h``
shifts the coefficients, the reachable set is exactly a set of such convex
combinations. Coefficients that would move past ``D`` pile up at ``D``.
A new covariance snaps onto an existing level of the same sensor when their
traces are within relative distance ``1/L``.

Actions pair a queue with ``alpha_hat`` values for its first ``n - 1``
positions. The stage cost is the exact expected ``sum_i Tr P_i`` of the slot,
computed before snapping.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .estimator import map_h
from .filtering import SteadyStateFilter
from .scheduling import greedy_order, one_step_cost_from_traces
from .trigger import alpha_from_hat, numerical_rank

POLICY_FORMAT = "eventsched-mdp-policy"
POLICY_VERSION = 1


class MdpGridError(RuntimeError):
    pass


class MdpConvergenceError(RuntimeError):
    def __init__(self, msg: str, span_history: list[float]):
        super().__init__(msg)
        self.span_history = span_history


class _LevelSet:
    """Quantized covariance levels of one sensor."""

    def __init__(self, filt: SteadyStateFilter, depth: int, levels: int):
        self.filt = filt
        self.D = depth
        self.L = levels
        H = [np.array(filt.P_bar)]
        for _ in range(depth + 1):
            H.append(map_h(filt, H[-1]))
        self.H = np.array(H)
        self.T = np.trace(self.H, axis1=1, axis2=2)
        self.coefs: list[np.ndarray] = []
        self.traces: list[float] = []
        self.h_traces: list[float] = []
        self.ranks: list[int] = []
        e0 = np.zeros(depth + 1)
        e0[0] = 1.0
        self.add_or_snap(e0)

    def matrix(self, c: np.ndarray) -> np.ndarray:
        return np.tensordot(c, self.H[: self.D + 1], axes=1)

    def shift(self, c: np.ndarray) -> np.ndarray:
        out = np.zeros_like(c)
        out[1:] = c[:-1]
        out[-1] += c[-1]
        return out

    def hold(self, c: np.ndarray, ah: float) -> np.ndarray:
        out = ah * self.shift(c)
        out[0] += 1.0 - ah
        return out

    def add_or_snap(self, c: np.ndarray) -> int:
        tr = float(c @ self.T[: self.D + 1])
        if self.traces:
            tr_arr = np.asarray(self.traces)
            j = int(np.argmin(np.abs(tr_arr - tr)))
            if abs(tr_arr[j] - tr) <= tr_arr[j] / self.L:
                return j
        self.coefs.append(np.array(c, dtype=float))
        self.traces.append(tr)
        # h of a level uses the exact next iterate, saturation only affects the stored state
        self.h_traces.append(float(c @ self.T[1:]))
        self.ranks.append(numerical_rank(np.tensordot(c, self.H[1:], axes=1) - self.filt.P_bar))
        return len(self.coefs) - 1


@dataclass(frozen=True)
class Action:
    queue: tuple[int, ...]
    alpha_hats: tuple[float, ...]  # one per queue position except the last

    def per_sensor_alpha(self, n: int) -> np.ndarray:
        alphas = np.full(n, np.inf)
        for pos, s in enumerate(self.queue[:-1]):
            alphas[s] = alpha_from_hat(self.alpha_hats[pos])
        return alphas


def action_grid(n: int, grid_size: int = 10, queues: Sequence[tuple[int, ...]] | None = None) -> list[Action]:
    if grid_size < 2:
        raise ValueError("alpha grid needs at least two points")
    if queues is None:
        queues = list(itertools.permutations(range(n)))
    vals = np.linspace(0.0, 1.0, grid_size)
    out = []
    for q in queues:
        for ah in itertools.product(vals, repeat=n - 1):
            out.append(Action(tuple(int(i) for i in q), tuple(float(a) for a in ah)))
    return out


@dataclass(eq=False)
class MdpModel:
    filters: tuple[SteadyStateFilter, ...]
    levels: list[_LevelSet]
    states: np.ndarray  # (S, n) level index per sensor
    actions: list[Action]
    succ: np.ndarray  # (S, A, n) successor state per transmitter branch
    prob: np.ndarray  # (S, A, n)
    stage_cost: np.ndarray  # (S, A)
    depth: int
    quant_levels: int

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    def state_traces(self) -> np.ndarray:
        """``(S, n)`` trace of every sensor's covariance in every state."""
        cols = [np.asarray(lv.traces)[self.states[:, i]] for i, lv in enumerate(self.levels)]
        return np.stack(cols, axis=1)

    def check(self, atol: float = 1e-9) -> None:
        rows = self.prob.sum(axis=2)
        if np.max(np.abs(rows - 1.0)) > atol:
            raise AssertionError("transition rows do not sum to 1")
        if np.any(self.prob < -atol):
            raise AssertionError("negative transition probability")
        if np.any(self.stage_cost < 0):
            raise AssertionError("negative stage cost")

    def stats(self) -> dict:
        return {
            "states": int(self.n_states),
            "actions": len(self.actions),
            "levels_per_sensor": [len(lv.traces) for lv in self.levels],
            "depth": self.depth,
            "quantization": self.quant_levels,
        }


def _branches(levels, state, action: Action):
    """Yield ``(probability, successor level tuple)`` for each possible transmitter."""
    q = action.queue
    n = len(q)
    ranks = [levels[s].ranks[state[s]] for s in q]
    betas = [action.alpha_hats[p] ** (ranks[p] / 2.0) for p in range(n - 1)]
    reach = 1.0
    for m in range(n):
        p_m = reach if m == n - 1 else reach * (1.0 - betas[m])
        nxt = list(state)
        for pos, s in enumerate(q):
            c = levels[s].coefs[state[s]]
            if pos < m:
                nxt[s] = levels[s].add_or_snap(levels[s].hold(c, action.alpha_hats[pos]))
            elif pos == m:
                nxt[s] = 0
            else:
                nxt[s] = levels[s].add_or_snap(levels[s].shift(c))
        yield p_m, tuple(nxt)
        if m < n - 1:
            reach *= betas[m]


def build_state_grid(
    filters: Sequence[SteadyStateFilter],
    depth: int = 8,
    levels: int = 32,
    alpha_grid: int = 10,
    max_states: int = 20_000,
) -> MdpModel:
    """Breadth-first closure of the reachable grid from ``(P_bar, ..., P_bar)``."""
    if depth < 1 or levels < 2:
        raise ValueError("need depth >= 1 and levels >= 2")
    filters = tuple(filters)
    n = len(filters)
    lsets = [_LevelSet(f, depth, levels) for f in filters]
    if n <= 3:
        actions = action_grid(n, alpha_grid)
    else:
        P0 = [f.P_bar for f in filters]
        actions = action_grid(n, alpha_grid, queues=[greedy_order(filters, P0)])
    index = {tuple([0] * n): 0}
    order = [tuple([0] * n)]
    succ_rows, prob_rows = [], []
    todo = deque([0])
    while todo:
        s = todo.popleft()
        state = order[s]
        srow = np.zeros((len(actions), n), dtype=np.int64)
        prow = np.zeros((len(actions), n))
        for a, act in enumerate(actions):
            for m, (p, nxt) in enumerate(_branches(lsets, state, act)):
                j = index.get(nxt)
                if j is None:
                    if len(order) >= max_states:
                        raise MdpGridError(
                            f"state grid exceeded {max_states} states; use fewer quantization levels or a smaller depth"
                        )
                    j = len(order)
                    index[nxt] = j
                    order.append(nxt)
                    todo.append(j)
                srow[a, m] = j
                prow[a, m] = p
        succ_rows.append(srow)
        prob_rows.append(prow)
    states = np.array(order, dtype=np.int64).reshape(len(order), n)
    succ = np.stack(succ_rows)
    prob = np.stack(prob_rows)

    cost = np.zeros((len(order), len(actions)))
    pbar = np.array([lv.T[0] for lv in lsets])
    for s, state in enumerate(order):
        htr = np.array([lsets[i].h_traces[state[i]] for i in range(n)])
        rk = np.array([lsets[i].ranks[state[i]] for i in range(n)])
        for a, act in enumerate(actions):
            q = list(act.queue)
            cost[s, a] = one_step_cost_from_traces(pbar[q], htr[q], rk[q], np.asarray(act.alpha_hats))
    return MdpModel(filters, lsets, states, actions, succ, prob, cost, depth, levels)


def transition_law(model: MdpModel, state: int, action: int) -> dict[int, float]:
    """Successor distribution with duplicate successors merged."""
    out: dict[int, float] = {}
    for j, p in zip(model.succ[state, action], model.prob[state, action]):
        if p > 0:
            out[int(j)] = out.get(int(j), 0.0) + float(p)
    return out


@dataclass(eq=False)
class MdpPolicy:
    """Stationary policy on a state grid; online lookup snaps by summed trace distance."""

    state_traces: np.ndarray  # (S, n)
    actions: list[Action]
    action_index: np.ndarray  # (S,)
    average_cost: float
    relative_values: np.ndarray
    pbar_traces: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.state_traces.shape[1]

    def check(self) -> None:
        floor = float(np.sum(self.pbar_traces))
        if self.n >= 2 and not self.average_cost > floor:
            raise AssertionError(f"average cost {self.average_cost} not above sum Tr P_bar = {floor}")

    def nearest_state(self, traces) -> np.ndarray | int:
        tr = np.asarray(traces, dtype=float)
        single = tr.ndim == 1
        tr = np.atleast_2d(tr)
        dist = np.abs(tr[:, None, :] - self.state_traces[None, :, :]).sum(axis=2)
        idx = np.argmin(dist, axis=1)  # first minimum, so lower index wins ties
        return int(idx[0]) if single else idx

    def action_for(self, traces) -> Action:
        return self.actions[int(self.action_index[self.nearest_state(traces)])]

    def step(self, k: int, P_prev: Sequence[np.ndarray]):
        return mdp_policy_step(self, P_prev)

    def step_batch(self, k: int, P_prev: Sequence[np.ndarray]):
        """Batched lookup: ``P_prev[i]`` has shape ``(E, d_i, d_i)``.

        Returns ``(queues (E, n), alpha_hats (E, n))`` with ``alpha_hat`` 1 for
        the last queue entry.
        """
        tr = np.stack([np.trace(P, axis1=1, axis2=2) for P in P_prev], axis=1)
        idx = self.action_index[self.nearest_state(tr)]
        queues, ahs = self._tables()
        return queues[idx], ahs[idx]

    def _tables(self):
        if "_table_cache" not in self.__dict__:
            n = self.n
            queues = np.array([a.queue for a in self.actions], dtype=np.int64)
            ahs = np.ones((len(self.actions), n))
            for j, a in enumerate(self.actions):
                for pos, s in enumerate(a.queue[:-1]):
                    ahs[j, s] = a.alpha_hats[pos]
            self.__dict__["_table_cache"] = (queues, ahs)
        return self.__dict__["_table_cache"]

    def to_dict(self) -> dict:
        return {
            "format": POLICY_FORMAT,
            "version": POLICY_VERSION,
            "n": self.n,
            "average_cost": self.average_cost,
            "pbar_traces": self.pbar_traces.tolist(),
            "state_traces": self.state_traces.tolist(),
            "relative_values": self.relative_values.tolist(),
            "actions": [{"queue": list(a.queue), "alpha_hats": list(a.alpha_hats)} for a in self.actions],
            "action_index": self.action_index.tolist(),
            "meta": self.meta,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "MdpPolicy":
        if d.get("format") != POLICY_FORMAT:
            raise ValueError("not an MDP policy file")
        if d.get("version") != POLICY_VERSION:
            raise ValueError(f"unsupported policy version {d.get('version')}")
        n = int(d["n"])
        return cls(
            state_traces=np.asarray(d["state_traces"], dtype=float).reshape(-1, n),
            actions=[Action(tuple(a["queue"]), tuple(a["alpha_hats"])) for a in d["actions"]],
            action_index=np.asarray(d["action_index"], dtype=np.int64),
            average_cost=float(d["average_cost"]),
            relative_values=np.asarray(d["relative_values"], dtype=float),
            pbar_traces=np.asarray(d["pbar_traces"], dtype=float),
            meta=dict(d.get("meta", {})),
        )

    @classmethod
    def load(cls, path) -> "MdpPolicy":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def mdp_policy_step(policy: MdpPolicy, P_prev: Sequence[np.ndarray]):
    """Queue and per-sensor ``alpha`` for the grid state nearest to ``P_prev``."""
    tr = np.array([np.trace(P) for P in P_prev])
    act = policy.action_for(tr)
    return act.queue, act.per_sensor_alpha(policy.n)


def relative_value_iteration(
    model: MdpModel,
    tol: float = 1e-6,
    max_iter: int = 10_000,
    aperiodicity: float = 0.5,
) -> MdpPolicy:
    """Relative value iteration with reference state 0.

    ``aperiodicity`` mixes each kernel with the identity (``tau P + (1-tau) I``),
    which leaves average costs and optimal policies unchanged but removes
    periodic oscillation of the iterates. Set it to 1 for the plain scheme.
    """
    if not 0.0 < aperiodicity <= 1.0:
        raise ValueError("aperiodicity must lie in (0, 1]")
    tau = aperiodicity
    S = model.n_states
    v = np.zeros(S)
    history: list[float] = []
    for _ in range(max_iter):
        Q = model.stage_cost + tau * np.sum(model.prob * v[model.succ], axis=2) + (1.0 - tau) * v[:, None]
        Tv = Q.min(axis=1)
        diff = Tv - v
        span = float(diff.max() - diff.min())
        history.append(span)
        v = Tv - Tv[0]
        if span < tol:
            break
    else:
        raise MdpConvergenceError(
            f"relative value iteration did not converge in {max_iter} sweeps (last span {history[-1]:.3g})",
            history,
        )
    g = 0.5 * float(diff.max() + diff.min())
    # the damped iterate v solves g + tau v = c + tau P v, so tau v is the relative value
    v = tau * v
    Q = model.stage_cost + np.sum(model.prob * v[model.succ], axis=2)
    best = np.argmin(Q, axis=1)
    return MdpPolicy(
        state_traces=model.state_traces(),
        actions=list(model.actions),
        action_index=best.astype(np.int64),
        average_cost=g,
        relative_values=v,
        pbar_traces=np.array([lv.T[0] for lv in model.levels]),
        meta={"iterations": len(history), "final_span": history[-1], **model.stats()},
    )


def policy_average_cost(model: MdpModel, action_index: np.ndarray) -> float:
    """Exact long-run average cost of a stationary policy on the grid (single recurrent class)."""
    S = model.n_states
    a = np.asarray(action_index)
    P = np.zeros((S, S))
    rows = np.repeat(np.arange(S), model.succ.shape[2])
    np.add.at(P, (rows, model.succ[np.arange(S), a].ravel()), model.prob[np.arange(S), a].ravel())
    c = model.stage_cost[np.arange(S), a]
    M = np.vstack([P.T - np.eye(S), np.ones(S)])
    rhs = np.zeros(S + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return float(pi @ c)


def train_policy(filters, depth=8, levels=32, alpha_grid=10, tol=1e-6, max_iter=10_000, max_states=20_000):
    model = build_state_grid(filters, depth, levels, alpha_grid, max_states)
    model.check()
    return model, relative_value_iteration(model, tol, max_iter)


__all__ = [
    "Action",
    "MdpConvergenceError",
    "MdpGridError",
    "MdpModel",
    "MdpPolicy",
    "action_grid",
    "build_state_grid",
    "mdp_policy_step",
    "policy_average_cost",
    "relative_value_iteration",
    "train_policy",
    "transition_law",
]
