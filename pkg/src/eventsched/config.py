"""Experiment configuration files (JSON).

Sensors are numbered from 1 in config files and from 0 in the Python API.
Every validation error names the offending field and the line it sits on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .model import LtiSystem, SystemSet

SCHEDULERS = ("offline", "greedy", "mdp")


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "", line: int | None = None, source: str = "<config>"):
        self.path = path
        self.line = line
        where = source if line is None else f"{source}:{line}"
        super().__init__(f"{where}: {path + ': ' if path else ''}{message}")


def _line(text: str, idx: int) -> int:
    return text.count("\n", 0, idx) + 1


def _skip_ws(text: str, idx: int) -> int:
    while idx < len(text) and text[idx] in " \t\r\n":
        idx += 1
    return idx


def locate_fields(text: str) -> dict[tuple, int]:
    """Map every field path in an already-valid JSON document to its line."""
    dec = json.JSONDecoder()
    out: dict[tuple, int] = {}

    def walk(idx: int, path: tuple) -> int:
        idx = _skip_ws(text, idx)
        out[path] = _line(text, idx)
        ch = text[idx]
        if ch in "{[":
            close = "}" if ch == "{" else "]"
            idx = _skip_ws(text, idx + 1)
            if text[idx] == close:
                return idx + 1
            pos = 0
            while True:
                if ch == "{":
                    key, idx = json.decoder.scanstring(text, idx + 1)
                    out[path + (key,)] = _line(text, idx)
                    idx = _skip_ws(text, idx) + 1  # colon
                    idx = walk(idx, path + (key,))
                else:
                    idx = walk(idx, path + (pos,))
                    pos += 1
                idx = _skip_ws(text, idx)
                if text[idx] == ",":
                    idx = _skip_ws(text, idx + 1)
                    continue
                return idx + 1
        _, end = dec.raw_decode(text, idx)
        return end

    walk(0, ())
    return out


def format_path(path: tuple) -> str:
    s = ""
    for p in path:
        s += f"[{p}]" if isinstance(p, int) else (f".{p}" if s else p)
    return s


@dataclass(frozen=True)
class MdpSettings:
    depth: int = 8
    levels: int = 32
    alpha_grid: int = 10
    tol: float = 1e-6
    max_iter: int = 10_000
    max_states: int = 20_000
    policy_file: str = "mdp_policy.json"


@dataclass(frozen=True)
class LowerBoundSettings:
    ell_max: int = 20
    rate_grid: int = 200
    restarts: int = 3


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    systems: SystemSet
    scheduler: str = "greedy"
    horizon: int = 1000
    runs: int = 500
    seed: int = 0
    offline_table: tuple[int, ...] | None = None  # 0-based
    greedy_method: str = "auto"
    mdp: MdpSettings = field(default_factory=MdpSettings)
    lower_bound: LowerBoundSettings = field(default_factory=LowerBoundSettings)
    out_dir: str = "results"
    source: str = "<config>"


class _Checker:
    def __init__(self, lines: dict[tuple, int], source: str):
        self.lines = lines
        self.source = source

    def fail(self, path: tuple, msg: str):
        line = None
        p = path
        while line is None and p is not None:
            line = self.lines.get(p)
            p = p[:-1] if p else None
        raise ConfigError(msg, format_path(path), line, self.source)

    def obj(self, v, path, allowed) -> dict:
        if not isinstance(v, dict):
            self.fail(path, "expected an object")
        for k in v:
            if k not in allowed:
                self.fail(path + (k,), f"unknown field (allowed: {', '.join(sorted(allowed))})")
        return v

    def integer(self, v, path, lo=None) -> int:
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(path, "expected an integer")
        if lo is not None and v < lo:
            self.fail(path, f"must be >= {lo}")
        return v

    def number(self, v, path, positive=False) -> float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, "expected a number")
        if positive and not v > 0:
            self.fail(path, "must be positive")
        return float(v)

    def matrix(self, v, path) -> np.ndarray:
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return np.array([[float(v)]])
        if not isinstance(v, list) or not v:
            self.fail(path, "expected a nonempty matrix (list of rows)")
        if all(isinstance(r, (int, float)) and not isinstance(r, bool) for r in v):
            v = [v]
        width = None
        for i, row in enumerate(v):
            if not isinstance(row, list) or not row:
                self.fail(path + (i,), "expected a nonempty row")
            if width is None:
                width = len(row)
            elif len(row) != width:
                self.fail(path + (i,), f"row has {len(row)} entries, expected {width}")
            for j, x in enumerate(row):
                if isinstance(x, bool) or not isinstance(x, (int, float)):
                    self.fail(path + (i, j), "expected a number")
        return np.array(v, dtype=float)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", "", exc.lineno, source) from None
    ck = _Checker(locate_fields(text), source)
    top = ck.obj(
        raw,
        (),
        {"systems", "scheduler", "horizon", "runs", "seed", "offline", "greedy", "mdp", "lower_bound", "output"},
    )
    if "systems" not in top:
        ck.fail((), "missing field 'systems'")
    if not isinstance(top["systems"], list) or not top["systems"]:
        ck.fail(("systems",), "expected a nonempty list of systems")
    systems = []
    for i, s in enumerate(top["systems"]):
        p = ("systems", i)
        ck.obj(s, p, {"name", "A", "C", "Q", "R", "Pi0"})
        for key in ("A", "C", "Q", "R"):
            if key not in s:
                ck.fail(p, f"missing field '{key}'")
        mats = {k: ck.matrix(s[k], p + (k,)) for k in ("A", "C", "Q", "R", "Pi0") if k in s}
        try:
            systems.append(LtiSystem(**mats))
        except ValueError as exc:
            ck.fail(p, str(exc))
    n = len(systems)

    kw: dict[str, Any] = {"systems": SystemSet(systems), "source": source}
    if "scheduler" in top:
        if top["scheduler"] not in SCHEDULERS:
            ck.fail(("scheduler",), f"must be one of {', '.join(SCHEDULERS)}")
        kw["scheduler"] = top["scheduler"]
    if "horizon" in top:
        kw["horizon"] = ck.integer(top["horizon"], ("horizon",), 1)
    if "runs" in top:
        kw["runs"] = ck.integer(top["runs"], ("runs",), 1)
    if "seed" in top:
        kw["seed"] = ck.integer(top["seed"], ("seed",), 0)
        if kw["seed"] >= 2**64:
            ck.fail(("seed",), "must fit in 64 bits")
    if "offline" in top:
        off = ck.obj(top["offline"], ("offline",), {"table"})
        if "table" in off:
            tab = off["table"]
            if not isinstance(tab, list) or not tab:
                ck.fail(("offline", "table"), "expected a nonempty list of sensor numbers")
            for j, s in enumerate(tab):
                ck.integer(s, ("offline", "table", j), 1)
                if s > n:
                    ck.fail(("offline", "table", j), f"sensor {s} does not exist (sensors are numbered 1..{n})")
            kw["offline_table"] = tuple(s - 1 for s in tab)
    if "greedy" in top:
        g = ck.obj(top["greedy"], ("greedy",), {"method"})
        if "method" in g:
            if g["method"] not in ("auto", "closed_form", "numeric"):
                ck.fail(("greedy", "method"), "must be auto, closed_form or numeric")
            kw["greedy_method"] = g["method"]
    if "mdp" in top:
        m = ck.obj(top["mdp"], ("mdp",), set(MdpSettings.__dataclass_fields__))
        vals = {}
        for k, v in m.items():
            p = ("mdp", k)
            if k == "tol":
                vals[k] = ck.number(v, p, positive=True)
            elif k == "policy_file":
                if not isinstance(v, str):
                    ck.fail(p, "expected a string")
                vals[k] = v
            else:
                vals[k] = ck.integer(v, p, {"depth": 1, "levels": 2, "alpha_grid": 2}.get(k, 1))
        kw["mdp"] = MdpSettings(**vals)
    if "lower_bound" in top:
        lb = ck.obj(top["lower_bound"], ("lower_bound",), set(LowerBoundSettings.__dataclass_fields__))
        kw["lower_bound"] = LowerBoundSettings(
            **{k: ck.integer(v, ("lower_bound", k), 0 if k == "restarts" else 1) for k, v in lb.items()}
        )
    if "output" in top:
        o = ck.obj(top["output"], ("output",), {"dir"})
        if "dir" in o:
            if not isinstance(o["dir"], str):
                ck.fail(("output", "dir"), "expected a string")
            kw["out_dir"] = o["dir"]
    if kw.get("scheduler") == "offline" and "offline_table" not in kw:
        ck.fail(("scheduler",), "offline scheduler needs offline.table")
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(p)) from None
    return parse_config(text, str(p))
