"""Cost of every schedule on the two-process example, next to the lower bound.

    python3 demos/two_process_table.py [--runs 100] [--horizon 1000]

A smaller run than the acceptance suite, meant for reading the numbers.
"""

import argparse
import time

import numpy as np

from eventsched.filtering import solve_dare
from eventsched.lowerbound import gap_report, lower_bound, queue_heuristic_from_rates
from eventsched.mdp import train_policy
from eventsched.model import two_process_example
from eventsched.scheduling import GreedyPolicy, PeriodicPolicy
from eventsched.simulation import monte_carlo_cost, periodic_cycle_cost


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--horizon", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    filters = [solve_dare(s) for s in two_process_example()]
    for i, f in enumerate(filters, start=1):
        print(f"sensor {i}: Tr P_bar = {np.trace(f.P_bar):.4f}")

    # sensor 2 once, then sensor 1 twice (0-based indices)
    table = (1, 0, 0)
    rows = {"offline (closed form)": periodic_cycle_cost(filters, table)}

    t0 = time.perf_counter()
    greedy, _ = monte_carlo_cost(filters, GreedyPolicy(tuple(filters)), args.horizon, args.runs, args.seed)
    rows["greedy"] = greedy.mean
    print(f"greedy simulated in {time.perf_counter() - t0:.1f}s, stderr {greedy.stderr:.4f}")

    model, policy = train_policy(filters)
    mdp, _ = monte_carlo_cost(filters, policy, args.horizon, args.runs, args.seed)
    rows["mdp (model)"] = policy.average_cost
    rows["mdp (simulated)"] = mdp.mean
    print(f"MDP grid: {model.stats()}")

    periodic, _ = monte_carlo_cost(filters, PeriodicPolicy(table, 2), args.horizon, 1, args.seed)
    print(f"offline simulated once: {periodic.mean:.4f}")

    t0 = time.perf_counter()
    lb = lower_bound(filters, seed=args.seed)
    print(f"lower bound in {time.perf_counter() - t0:.1f}s, rates {np.round(lb.rates, 3).tolist()}")
    print(f"static queue from the rates (1-based): {[i + 1 for i in queue_heuristic_from_rates(lb)]}")

    print()
    print(f"{'schedule':<24}{'J':>10}{'gap to LB':>12}")
    for r in gap_report(rows, lb.total):
        print(f"{r['schedule']:<24}{r['J']:>10.4f}{r['gap_upper_bound']:>12.4f}")
    print(f"{'lower bound':<24}{lb.total:>10.4f}")


if __name__ == "__main__":
    main()
