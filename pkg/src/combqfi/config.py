"""Experiment configuration files (YAML, ``schema_version: 1``).

Example::

    schema_version: 1
    experiment: sweep            # qfi | sweep | probe | variational | channel-ncopy
    interaction: swap
    scenarios: [nm-control, nm-free, m-control, m-free]
    N: [2]
    t_tot: {start: 0.5, stop: 21, num: 11}   # or a list of values
    omega: 0.3141592653589793
    g: 1.0
    seed: 0
    output: results.csv
    solver: {gap_tol: 1.0e-8, feas_tol: 1.0e-8, backend: ipm}

Errors are reported as :class:`ConfigError` with the line of the offending
field when it is known.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .collision import InteractionKind, Scenario
from .errors import CombQfiError, StructureError

SCHEMA_VERSION = 1
EXPERIMENTS = ("qfi", "sweep", "probe", "variational", "channel-ncopy")
CHANNEL_TYPES = ("phase", "collision-step", "random")


class ConfigError(CombQfiError, ValueError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    backend: str = "ipm"


@dataclass(frozen=True)
class ChannelSettings:
    type: str = "phase"
    t: float = 1.0
    scenario: str = "m-control"
    draws: int = 1


@dataclass(frozen=True)
class VariationalSettings:
    restarts: int = 20
    max_iters: int = 400
    fd_step: float = 1e-5


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    interaction: str = "swap"
    scenarios: tuple = tuple(s.value for s in Scenario)
    N: tuple = (1,)
    t_tot: tuple = (1.0,)
    omega: float = math.pi / 10
    g: float = 1.0
    env_init: Optional[str] = None
    seed: int = 0
    output: Optional[str] = None
    timing: bool = False
    solver: SolverSettings = field(default_factory=SolverSettings)
    channel: ChannelSettings = field(default_factory=ChannelSettings)
    variational: VariationalSettings = field(default_factory=VariationalSettings)
    schema_version: int = SCHEMA_VERSION


def _lines(node, prefix="", out=None):
    """Map dotted key paths to 1-based line numbers."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = prefix + str(k.value)
            out[key] = k.start_mark.line + 1
            _lines(v, key + ".", out)
    return out


class _Reader:
    def __init__(self, doc, lines):
        self.doc = doc
        self.lines = lines

    def fail(self, key, msg):
        line = self.lines.get(key)
        where = f"line {line}: " if line else ""
        raise ConfigError(f"{where}field '{key}': {msg}")

    def get(self, key, default=None):
        node = self.doc
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def number(self, key, default, kind=float, positive=False, nonneg=False):
        v = self.get(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(key, f"expected a number, got {v!r}")
        if kind is int and int(v) != v:
            self.fail(key, f"expected an integer, got {v!r}")
        v = kind(v)
        if not math.isfinite(v):
            self.fail(key, "must be finite")
        if positive and v <= 0:
            self.fail(key, "must be positive")
        if nonneg and v < 0:
            self.fail(key, "must be nonnegative")
        return v

    def number_list(self, key, default, kind=float, positive=False):
        v = self.get(key, default)
        if isinstance(v, dict):
            try:
                start, stop, num = float(v["start"]), float(v["stop"]), int(v["num"])
            except (KeyError, TypeError, ValueError):
                self.fail(key, "a range needs numeric start, stop and num")
            if num < 1:
                self.fail(key, "grid must be nonempty")
            v = np.linspace(start, stop, num).tolist()
        if not isinstance(v, list):
            v = [v]
        if not v:
            self.fail(key, "grid must be nonempty")
        out = []
        for x in v:
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
                self.fail(key, f"expected numbers, got {x!r}")
            if kind is int and int(x) != x:
                self.fail(key, f"expected integers, got {x!r}")
            if positive and x <= 0:
                self.fail(key, f"values must be positive, got {x!r}")
            out.append(kind(x))
        return tuple(out)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        root = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    r = _Reader(doc, _lines(root))
    known = {"schema_version", "experiment", "interaction", "scenarios", "N", "t_tot", "omega", "g",
             "env_init", "seed", "output", "timing", "solver", "channel", "variational"}
    for k in doc:
        if k not in known:
            r.fail(str(k), "unknown field")

    version = doc.get("schema_version")
    if version is None:
        raise ConfigError(f"{source}: missing required field 'schema_version'")
    if version != SCHEMA_VERSION:
        r.fail("schema_version", f"unsupported version {version!r} (this build reads {SCHEMA_VERSION})")
    exp = doc.get("experiment")
    if exp not in EXPERIMENTS:
        r.fail("experiment", f"expected one of {list(EXPERIMENTS)}, got {exp!r}")

    try:
        interaction = InteractionKind.parse(doc.get("interaction", "swap")).value
    except StructureError as exc:
        r.fail("interaction", str(exc))
    scen = doc.get("scenarios", [s.value for s in Scenario])
    if not isinstance(scen, list):
        scen = [scen]
    if not scen:
        r.fail("scenarios", "list must be nonempty")
    try:
        scenarios = tuple(Scenario.parse(s).value for s in scen)
    except StructureError as exc:
        r.fail("scenarios", str(exc))

    N = r.number_list("N", [1], kind=int, positive=True)
    t_tot = r.number_list("t_tot", [1.0])
    if min(t_tot) < 0:
        r.fail("t_tot", "times must be nonnegative")
    env_init = doc.get("env_init")
    if env_init is not None:
        env_init = str(env_init)
        if env_init not in ("0", "+", "mixed"):
            r.fail("env_init", f"expected '0', '+' or 'mixed', got {env_init!r}")
    output = doc.get("output")
    if output is not None and not isinstance(output, str):
        r.fail("output", "expected a file path")
    timing = doc.get("timing", False)
    if not isinstance(timing, bool):
        r.fail("timing", "expected true or false")

    backend = r.get("solver.backend", "ipm")
    if backend not in ("ipm", "clarabel"):
        r.fail("solver.backend", f"expected 'ipm' or 'clarabel', got {backend!r}")
    solver = SolverSettings(r.number("solver.gap_tol", 1e-8, positive=True),
                            r.number("solver.feas_tol", 1e-8, positive=True), backend)

    ctype = r.get("channel.type", "phase")
    if ctype not in CHANNEL_TYPES:
        r.fail("channel.type", f"expected one of {list(CHANNEL_TYPES)}, got {ctype!r}")
    cscen = r.get("channel.scenario", "m-control")
    try:
        cscen = Scenario.parse(cscen).value
    except StructureError as exc:
        r.fail("channel.scenario", str(exc))
    channel = ChannelSettings(ctype, r.number("channel.t", 1.0, nonneg=True), cscen,
                              r.number("channel.draws", 1, kind=int, positive=True))
    variational = VariationalSettings(r.number("variational.restarts", 20, kind=int, positive=True),
                                      r.number("variational.max_iters", 400, kind=int, nonneg=True),
                                      r.number("variational.fd_step", 1e-5, positive=True))
    if exp == "channel-ncopy" and max(N) > 4:
        r.fail("N", "channel-ncopy supports N <= 4")

    return ExperimentConfig(
        experiment=exp, interaction=interaction, scenarios=scenarios, N=N, t_tot=t_tot,
        omega=r.number("omega", math.pi / 10), g=r.number("g", 1.0),
        env_init=env_init, seed=r.number("seed", 0, kind=int, nonneg=True), output=output, timing=timing,
        solver=solver, channel=channel, variational=variational,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
