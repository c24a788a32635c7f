"""Command-line entry point: ``eventsched <command> <config> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import SCHEDULERS, ConfigError, ExperimentConfig, load_config
from .filtering import DetectabilityError, solve_dare
from .lowerbound import InfeasibleRateError, gap_report, lower_bound, queue_heuristic_from_rates
from .mdp import MdpConvergenceError, MdpGridError, MdpPolicy, train_policy
from .model import validate_system
from .scheduling import GreedyPolicy, PeriodicPolicy
from .simulation import BatchResult, monte_carlo_cost, periodic_cycle_cost

EXIT_CONFIG = 2
EXIT_NUMERIC = 1


def _with_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    for name, attr in (("seed", "seed"), ("runs", "runs"), ("horizon", "horizon"), ("out", "out_dir"), ("scheduler", "scheduler")):
        val = getattr(args, name, None)
        if val is not None:
            changes[attr] = val
    if changes.get("runs", 1) < 1 or changes.get("horizon", 1) < 1:
        raise ConfigError("--runs and --horizon must be at least 1", source="command line")
    if changes.get("seed", 0) < 0:
        raise ConfigError("--seed must be nonnegative", source="command line")
    if not changes:
        return cfg
    d = dict(cfg.__dict__)
    d.update(changes)
    return ExperimentConfig(**d)


def _out_dir(cfg) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _filters(cfg):
    return [solve_dare(s) for s in cfg.systems]


def _mdp_policy(cfg, filters, train_if_missing=True) -> MdpPolicy:
    path = Path(cfg.out_dir) / cfg.mdp.policy_file
    if path.exists():
        return MdpPolicy.load(path)
    if not train_if_missing:
        raise FileNotFoundError(path)
    _, policy = _train(cfg, filters)
    return policy


def _train(cfg, filters):
    m = cfg.mdp
    model, policy = train_policy(filters, m.depth, m.levels, m.alpha_grid, m.tol, m.max_iter, m.max_states)
    _out_dir(cfg)
    policy.save(Path(cfg.out_dir) / m.policy_file)
    return model, policy


def _policy(cfg, filters, name):
    if name == "offline":
        if cfg.offline_table is None:
            raise ConfigError("offline scheduler needs offline.table", "offline.table", source=cfg.source)
        return PeriodicPolicy(cfg.offline_table, len(filters))
    if name == "greedy":
        return GreedyPolicy(tuple(filters), cfg.greedy_method)
    return _mdp_policy(cfg, filters)


def write_trace_csv(path: Path, result: BatchResult) -> None:
    """One row per (episode, step, sensor); sensors numbered from 1."""
    E, T, n = result.traces.shape
    ep = np.repeat(result.episodes, T * n)
    step = np.tile(np.repeat(np.arange(T), n), E)
    sensor = np.tile(np.arange(1, n + 1), E * T)
    sent = (result.transmitter[:, :, None] == np.arange(n)).astype(int).ravel()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("episode,step,sensor,trace_P,squared_error,transmitted\n")
        rows = np.column_stack([ep, step, sensor, result.traces.ravel(), result.sq_err.ravel(), sent])
        np.savetxt(fh, rows, fmt=["%d", "%d", "%d", "%.10g", "%.10g", "%d"], delimiter=",")


def cmd_dare(cfg, args) -> int:
    status = 0
    for i, s in enumerate(cfg.systems, start=1):
        print(f"system {i}")
        rep = validate_system(s)
        for w in rep.warnings:
            print(f"  warning: {w}")
        for e in rep.errors:
            print(f"  error: {e}")
        if not rep.ok:
            status = EXIT_NUMERIC
            continue
        f = solve_dare(s)
        with np.printoptions(precision=6, suppress=True):
            print(f"  P_bar (posterior) =\n{f.P_bar}")
            print(f"  M_bar (prior) =\n{f.M_bar}")
            print(f"  K_bar =\n{f.K_bar}")
        print(f"  Tr P_bar = {np.trace(f.P_bar):.6f}, iterations = {f.iterations}")
    return status


def cmd_simulate(cfg, args) -> int:
    filters = _filters(cfg)
    policy = _policy(cfg, filters, cfg.scheduler)
    t0 = time.perf_counter()
    summary, result = monte_carlo_cost(filters, policy, cfg.horizon, cfg.runs, cfg.seed)
    out = _out_dir(cfg)
    write_trace_csv(out / "traces.csv", result)
    info = {"scheduler": cfg.scheduler, "seed": cfg.seed, **summary.to_dict()}
    _write_json(out / "summary.json", info)
    print(f"{cfg.scheduler}: J = {summary.mean:.4f} +/- {summary.stderr:.4f} ({cfg.runs} runs, T = {cfg.horizon}, {time.perf_counter() - t0:.1f}s)")
    return 0


def _lb(cfg, filters):
    lb = cfg.lower_bound
    return lower_bound(filters, lb.ell_max, lb.rate_grid, lb.restarts, seed=cfg.seed)


def cmd_lower_bound(cfg, args) -> int:
    sol = _lb(cfg, _filters(cfg))
    d = sol.to_dict()
    d["queue_heuristic"] = [i + 1 for i in queue_heuristic_from_rates(sol)]
    _write_json(_out_dir(cfg) / "lower_bound.json", d)
    print(f"LB = {sol.total:.4f}  rates = {np.round(sol.rates, 4).tolist()}  sensor costs = {np.round(sol.sensor_costs, 4).tolist()}")
    return 0


def cmd_mdp_train(cfg, args) -> int:
    t0 = time.perf_counter()
    model, policy = _train(cfg, _filters(cfg))
    st = model.stats()
    print(f"average cost = {policy.average_cost:.4f}")
    print(f"states = {st['states']}, actions = {st['actions']}, levels per sensor = {st['levels_per_sensor']}")
    print(f"sweeps = {policy.meta['iterations']}, time = {time.perf_counter() - t0:.1f}s")
    print(f"policy written to {Path(cfg.out_dir) / cfg.mdp.policy_file}")
    return 0


def cmd_compare(cfg, args) -> int:
    filters = _filters(cfg)
    rows = []
    if cfg.offline_table is not None:
        exact = periodic_cycle_cost(filters, cfg.offline_table)
        s, _ = monte_carlo_cost(filters, _policy(cfg, filters, "offline"), cfg.horizon, cfg.runs, cfg.seed)
        rows.append(("offline", s, exact))
    s, _ = monte_carlo_cost(filters, _policy(cfg, filters, "greedy"), cfg.horizon, cfg.runs, cfg.seed)
    rows.append(("greedy", s, None))
    _, pol = _train(cfg, filters)
    s, _ = monte_carlo_cost(filters, pol, cfg.horizon, cfg.runs, cfg.seed)
    rows.append(("mdp", s, pol.average_cost))
    sol = _lb(cfg, filters)

    out = _out_dir(cfg)
    with open(out / "table.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("schedule,J,stderr,model_J,runs,horizon\n")
        for name, s, model_J in rows:
            mj = "" if model_J is None else f"{model_J:.6f}"
            fh.write(f"{name},{s.mean:.6f},{s.stderr:.6f},{mj},{s.runs},{s.horizon}\n")
        fh.write(f"lower_bound,{sol.total:.6f},,,,\n")
    _write_json(out / "gap_report.json", {"schedules": gap_report({n: s.mean for n, s, _ in rows}, sol.total), "lower_bound": sol.to_dict()})
    print(f"{'schedule':<12}{'J':>10}{'stderr':>10}")
    for name, s, _ in rows:
        print(f"{name:<12}{s.mean:>10.4f}{s.stderr:>10.4f}")
    print(f"{'lower bound':<12}{sol.total:>10.4f}")
    return 0


COMMANDS = {
    "dare": cmd_dare,
    "simulate": cmd_simulate,
    "lower-bound": cmd_lower_bound,
    "mdp-train": cmd_mdp_train,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eventsched", description="Event-based multi-sensor scheduling experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config_pos", nargs="?", metavar="config", help="experiment config (JSON)")
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--runs", type=int)
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--scheduler", choices=SCHEDULERS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    path = args.config or args.config_pos
    if path is None:
        print("error: a config file is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _with_overrides(load_config(path), args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DetectabilityError, InfeasibleRateError, MdpGridError, MdpConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
