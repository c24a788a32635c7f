"""Relaxed-rate lower bound on the optimal average cost and the gap report.

Relaxing "exactly one transmission per slot" to "transmission rates summing to
at most one" decouples the sensors. Each sensor then runs its own trigger,
whose hold-back probability ``beta^l`` depends only on the number ``l`` of
slots since its last transmission. For a rate ``rho`` the per-sensor problem is

    minimize   rho * (Tr P^0 + sum_j S_j Tr P^{j+1})
    subject to rho * (1 + sum_j S_j) = 1,      S_j = beta^0 ... beta^j

with ``P^0 = P_bar`` and ``P^{j+1} = t(P^j, alpha^j)``, ``alpha_hat^j =
(beta^j)^(2/r)``. The series is truncated at depth ``ell_max`` by forcing
the last ``beta`` to zero.

Each ``P^j`` is a convex combination of ``h^l(P_bar)``, so the solver keeps
coefficient vectors over those iterates and only ever needs the scalar traces
``Tr h^l(P_bar)``.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .estimator import map_h, map_t
from .filtering import SteadyStateFilter
from .optimize import golden_section_batch
from .trigger import alpha_from_hat, numerical_rank


class InfeasibleRateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HoldingCovariances:
    mats: tuple[np.ndarray, ...]
    alpha_hats: tuple[float, ...]

    def traces(self) -> np.ndarray:
        return np.array([np.trace(P) for P in self.mats])


def holding_covariances(filt: SteadyStateFilter, betas: Sequence[float]) -> HoldingCovariances:
    """``P^0 = P_bar``, ``P^{j+1} = t(P^j, alpha^j)`` with ``alpha_hat^j = (beta^j)^(2/r_j)``."""
    mats = [np.array(filt.P_bar)]
    ahs = []
    for b in betas:
        if not 0.0 <= b <= 1.0:
            raise ValueError("betas must lie in [0, 1]")
        r = numerical_rank(map_h(filt, mats[-1]) - filt.P_bar)
        a = float(b) ** (2.0 / r) if r > 0 else 1.0
        ahs.append(a)
        mats.append(map_t(filt, mats[-1], alpha_from_hat(a)))
    return HoldingCovariances(tuple(mats), tuple(ahs))


def holding_covariances_closed_form(filt: SteadyStateFilter, alpha_hats: Sequence[float]) -> list[np.ndarray]:
    """Non-recursive expansion of the holding covariances over ``h^l(P_bar)``.

    ``P^j = prod_u a_u h^j(P_bar) + sum_l (1 - a_{j-1-l}) prod_{u<l} a_{j-1-u} h^l(P_bar)``.
    """
    a = np.asarray(alpha_hats, dtype=float)
    iters = [np.array(filt.P_bar)]
    for _ in range(len(a)):
        iters.append(map_h(filt, iters[-1]))
    out = [iters[0]]
    for j in range(1, len(a) + 1):
        P = np.prod(a[:j]) * iters[j]
        for l in range(j):
            coef = (1.0 - a[j - 1 - l]) * np.prod([a[j - 1 - u] for u in range(l)])
            P = P + coef * iters[l]
        out.append(P)
    return out


# ----------------------------------------------------------------------------
# per-sensor subproblem


@functools.lru_cache(maxsize=None)
def _shift_index(L: int) -> np.ndarray:
    j, m = np.ogrid[:L, :L]
    return np.where(m <= j, j - m, L)


@dataclass(frozen=True)
class _SensorTables:
    traces: np.ndarray  # Tr h^l(P_bar), l = 0..L
    ranks: np.ndarray  # rank(h^{l+1}(P_bar) - P_bar), l = 0..L
    ell_max: int

    @classmethod
    def build(cls, filt: SteadyStateFilter, ell_max: int) -> "_SensorTables":
        iters = [np.array(filt.P_bar)]
        for _ in range(ell_max + 1):
            iters.append(map_h(filt, iters[-1]))
        traces = np.array([np.trace(X) for X in iters[: ell_max + 1]])
        ranks = np.array([numerical_rank(iters[l + 1] - filt.P_bar) for l in range(ell_max + 1)])
        return cls(traces, ranks, ell_max)

    def cost_terms(self, beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Numerator ``Tr P^0 + sum S_j Tr P^{j+1}`` and renewal length ``1 + sum S_j``.

        ``beta`` has shape ``(B, L)``.
        """
        T = self.traces
        surv = np.cumprod(beta, axis=1)
        return T[0] + np.sum(surv * self.holding_traces(beta), axis=1), 1.0 + surv.sum(axis=1)

    def holding_traces(self, beta: np.ndarray) -> np.ndarray:
        """``Tr P^{j+1}`` for ``j < L``, batched over rows of ``beta``.

        The rank at step ``u`` is taken by position. The recursion would reset
        its rank after a zero ``beta``, but every later term is then weighted by
        a zero survival product, so the cost is unaffected.
        """
        B, L = beta.shape
        r = self.ranks[:L].astype(float)
        with np.errstate(divide="ignore"):
            a = np.where(r > 0, beta ** (2.0 / np.maximum(r, 1.0)), 1.0)
        # R[:, j, m] = a_{j-m} for m <= j, else 1
        ext = np.concatenate([a, np.ones((B, 1))], axis=1)
        R = ext[:, _shift_index(L)]
        cp = np.cumprod(R, axis=2)
        excl = np.concatenate([np.ones((B, L, 1)), cp[:, :, :-1]], axis=2)
        T = self.traces
        return ((1.0 - R) * excl) @ T[:L] + np.diagonal(cp, axis1=1, axis2=2) * T[1 : L + 1]


def _tail_den(beta_free: np.ndarray) -> np.ndarray:
    """``1 + sum_{j>=1} prod_{1<=u<=j} beta^u`` for free coordinates ``beta^1..``."""
    return 1.0 + np.cumprod(beta_free, axis=1).sum(axis=1)


def _assemble(beta_free: np.ndarray, K: np.ndarray, L: int) -> np.ndarray:
    B = beta_free.shape[0]
    beta0 = (K - 1.0) / _tail_den(beta_free)
    return np.concatenate([beta0[:, None], beta_free, np.zeros((B, 1))], axis=1)[:, :L]


def _repair(beta_free: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Push ``beta^1..`` toward one until ``beta^0`` is at most one."""
    need = _tail_den(beta_free) < K - 1.0
    if not np.any(need):
        return beta_free
    lo = np.zeros(len(K))
    hi = np.ones(len(K))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        trial = beta_free + mid[:, None] * (1.0 - beta_free)
        ok = _tail_den(trial) >= K - 1.0
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    s = np.where(need, hi, 0.0)
    return beta_free + s[:, None] * (1.0 - beta_free)


def _solve_batch(
    tables: _SensorTables,
    rhos: np.ndarray,
    x0: np.ndarray,
    tol: float = 1e-6,
    ftol: float = 1e-9,
    max_sweeps: int = 500,
) -> tuple[np.ndarray, np.ndarray]:
    """Projected coordinate descent; ``beta^0`` absorbs the recurrence equality."""
    L = tables.ell_max
    K = 1.0 / rhos
    free = _repair(np.array(x0, dtype=float), K)

    def value(bf, rows):
        num, _ = tables.cost_terms(_assemble(bf, K[rows], L))
        return rhos[rows] * num

    every = np.arange(len(rhos))
    fx = value(free, every)
    nfree = free.shape[1]
    if nfree == 0:
        return _assemble(free, K, L), fx
    active = np.ones(len(rhos), dtype=bool)
    for _ in range(max_sweeps):
        rows = np.flatnonzero(active)
        f_start = fx[rows].copy()
        Kr = K[rows]
        for l in range(nfree):
            fr = free[rows]
            prefix = np.cumprod(fr[:, :l], axis=1)
            a = 1.0 + prefix.sum(axis=1)
            lead = prefix[:, -1] if l > 0 else np.ones(len(rows))
            c = lead * _tail_den(fr[:, l + 1 :])
            with np.errstate(divide="ignore", invalid="ignore"):
                lo = np.where(c > 0, (Kr - 1.0 - a) / c, 0.0)
            lo = np.clip(lo, 0.0, 1.0)

            def f1(v, l=l, fr=fr):
                trial = fr.copy()
                trial[:, l] = v
                return value(trial, rows)

            v, fv = golden_section_batch(f1, lo, np.ones_like(lo), tol)
            take = fv <= fx[rows]
            free[rows, l] = np.where(take, v, free[rows, l])
            fx[rows] = np.where(take, fv, fx[rows])
        active[rows] = (f_start - fx[rows]) >= ftol
        if not np.any(active):
            break
    return _assemble(free, K, L), fx


def _solve_rates(
    tables: _SensorTables, rhos: np.ndarray, restarts: int = 3, rng=None
) -> tuple[np.ndarray, np.ndarray]:
    """Best of the all-0.5 start and ``restarts`` random starts, per rate."""
    rng = np.random.default_rng(0) if rng is None else rng
    L = tables.ell_max
    rhos = np.asarray(rhos, dtype=float)
    feasible = rhos * L >= 1.0 - 1e-12
    B = len(rhos)
    best_beta = np.full((B, L), np.nan)
    best_J = np.full(B, np.inf)
    if not np.any(feasible):
        return best_beta, best_J
    r = rhos[feasible]
    nfree = max(L - 2, 0)
    starts = [np.full((len(r), nfree), 0.5)]
    starts += [rng.random((len(r), nfree)) for _ in range(restarts)]
    sub_beta = np.full((len(r), L), np.nan)
    sub_J = np.full(len(r), np.inf)
    for x0 in starts:
        beta, J = _solve_batch(tables, r, x0)
        better = J < sub_J
        sub_beta[better] = beta[better]
        sub_J = np.where(better, J, sub_J)
    best_beta[feasible] = sub_beta
    best_J[feasible] = sub_J
    return best_beta, best_J


def per_sensor_subproblem(
    filt: SteadyStateFilter, rho: float, ell_max: int = 20, restarts: int = 3, rng=None
) -> tuple[np.ndarray, float]:
    """Optimal hold-back sequence and cost for one sensor at transmission rate ``rho``."""
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    if ell_max < 1:
        raise ValueError("ell_max must be at least 1")
    if rho * ell_max < 1.0 - 1e-12:
        raise InfeasibleRateError(
            f"rate {rho} cannot be met with truncation depth {ell_max}; increase ell_max"
        )
    tables = _SensorTables.build(filt, ell_max)
    beta, J = _solve_rates(tables, np.array([rho]), restarts=restarts, rng=rng)
    return beta[0], float(J[0])


def subproblem_cost(filt: SteadyStateFilter, rho: float, betas: Sequence[float]) -> float:
    """Direct evaluation ``rho (Tr P^0 + sum_j S_j Tr P^{j+1})`` via the matrix recursion."""
    hc = holding_covariances(filt, betas)
    tr = hc.traces()
    surv = np.cumprod(betas)
    return float(rho * (tr[0] + np.sum(surv * tr[1:])))


def recurrence_value(rho: float, betas: Sequence[float]) -> float:
    """``rho (1 + sum_j prod_{l<=j} beta^l)``; at least one for a recurrent schedule."""
    return float(rho * (1.0 + np.sum(np.cumprod(betas))))


# ----------------------------------------------------------------------------
# outer rate allocation


@dataclass(frozen=True, eq=False)
class LowerBoundSolution:
    rates: np.ndarray  # pi_i^0
    betas: np.ndarray  # (n, ell_max)
    sensor_costs: np.ndarray
    total: float
    ell_max: int
    rate_grid_size: int
    notes: list[str] = field(default_factory=list)

    def check(self) -> None:
        if np.any(self.rates <= 0) or np.any(self.rates > 1):
            raise AssertionError("rates must lie in (0, 1]")
        if self.rates.sum() > 1 + 1e-9:
            raise AssertionError("rates sum above one")
        for rho, b in zip(self.rates, self.betas):
            if recurrence_value(rho, b) < 1 - 1e-9:
                raise AssertionError("recurrence constraint violated")

    def to_dict(self) -> dict:
        return {
            "lower_bound": self.total,
            "ell_max": self.ell_max,
            "rate_grid_size": self.rate_grid_size,
            "rates": self.rates.tolist(),
            "sensor_costs": self.sensor_costs.tolist(),
            "betas": self.betas.tolist(),
            "notes": list(self.notes),
        }


def _best_allocation(table: np.ndarray, G: int) -> tuple[int, ...]:
    """Minimize ``sum_i table[i, k_i - 1]`` over ``sum k_i <= G``."""
    n = table.shape[0]
    if n == 1:
        return (G,)
    if n <= 3:
        best, arg = np.inf, None
        ks = np.arange(1, G + 1)
        for head in itertools.product(ks, repeat=n - 1):
            rest = G - sum(head)
            if rest < 1:
                continue
            # cost is nonincreasing in each rate, so the last sensor takes the rest
            tail = table[n - 1, :rest]
            k_last = int(np.argmin(tail)) + 1
            val = sum(table[i, k - 1] for i, k in enumerate(head)) + tail[k_last - 1]
            if val < best:
                best, arg = val, tuple(head) + (k_last,)
        if arg is None:
            raise InfeasibleRateError("no feasible rate allocation; increase ell_max or the grid")
        return arg
    k = [G // n] * n
    for i in range(G - sum(k)):
        k[i] += 1

    def total(kk):
        return sum(table[i, kk[i] - 1] for i in range(n))

    cur = total(k)
    improved = True
    while improved:
        improved = False
        for i in range(n):
            for j in range(n):
                if i == j or k[j] <= 1:
                    continue
                trial = list(k)
                trial[i] += 1
                trial[j] -= 1
                val = total(trial)
                if val < cur - 1e-12:
                    k, cur, improved = trial, val, True
    if not np.isfinite(cur):
        raise InfeasibleRateError("no feasible rate allocation; increase ell_max or the grid")
    return tuple(k)


def lower_bound(
    filters: Sequence[SteadyStateFilter],
    ell_max: int = 20,
    rate_grid_size: int = 200,
    restarts: int = 3,
    seed: int = 0,
) -> LowerBoundSolution:
    """Lower bound on the optimal average cost by searching rate allocations on a grid.

    Each sensor's cost is tabulated once over the rate grid ``k / G`` and the
    allocation is searched over ``sum_i rho_i <= 1``.
    """
    n = len(filters)
    G = int(rate_grid_size)
    if n == 1:
        G = max(G, 1)
    rhos = np.arange(1, G + 1) / G
    table = np.full((n, G), np.inf)
    beta_table = np.full((n, G, ell_max), np.nan)
    for i, f in enumerate(filters):
        tables = _SensorTables.build(f, ell_max)
        beta_table[i], table[i] = _solve_rates(
            tables, rhos, restarts=restarts, rng=np.random.default_rng([seed, i])
        )
    alloc = _best_allocation(table, G)
    rates = np.array([k / G for k in alloc])
    costs = np.array([table[i, k - 1] for i, k in enumerate(alloc)])
    betas = np.array([beta_table[i, k - 1] for i, k in enumerate(alloc)])
    notes = [f"series truncated at depth {ell_max} with forced transmission"]
    sol = LowerBoundSolution(rates, betas, costs, float(costs.sum()), ell_max, G, notes)
    sol.check()
    return sol


def queue_heuristic_from_rates(solution: LowerBoundSolution) -> tuple[int, ...]:
    """Static priority queue: ascending transmission rate, ties by index."""
    return tuple(int(i) for i in np.argsort(solution.rates, kind="stable"))


def gap_report(costs: dict[str, float], lb: float) -> list[dict]:
    """Per-scheduler cost, the lower bound and the resulting bound on the optimality gap."""
    return [
        {"schedule": name, "J": float(J), "LB": float(lb), "gap_upper_bound": float(J - lb)}
        for name, J in costs.items()
    ]
