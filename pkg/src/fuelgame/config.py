"""Run configuration: an INI-style document with [game], [numerics] and [run]."""

import configparser
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .core import CostFunction, GameSpec, VARIANTS
from .dynamics import SchemeParams
from .errors import ConfigError, FuelGameError

SCHEMA = {
    "game": {"n_players", "n_resources", "adjacency", "alpha", "cost", "cost_eps", "variant"},
    "numerics": {"dt", "delta", "horizon", "seed", "paths", "y_max", "boundary_tol",
                 "qvi_tol", "fd_step", "n_se"},
    "run": {"subcommand", "output_dir", "start_x", "start_y", "grid_player", "grid",
            "record_every", "perturbations", "round_trip", "sharing_adjacency",
            "compare_states", "compare_seed"},
}
REQUIRED = {("game", "n_players"), ("game", "alpha")}
SUBCOMMANDS = ("boundary", "value", "simulate", "verify", "compare")


@dataclass
class RunConfig:
    spec: GameSpec
    params: SchemeParams
    paths: int = 1000
    y_max: float = None
    qvi_tol: float = 1e-6
    fd_step: float = None
    n_se: float = 3.0
    subcommand: str = None
    output_dir: str = "out"
    start_x: np.ndarray = None
    start_y: np.ndarray = None
    grid_player: int = 0
    grid: tuple = (-2.0, 2.0, 41)
    record_every: int = 1
    perturbations: tuple = (0.05, -0.05, 0.1, -0.1, 0.3, -0.3)
    round_trip: float = 0.1
    sharing_adjacency: np.ndarray = None
    compare_states: int = 0
    compare_seed: int = 0
    raw: dict = field(default_factory=dict)


def _line_index(text):
    """Map (section, key) -> line number, scanning the raw text."""
    lines = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip().lower()
            lines[(section, None)] = no
            continue
        m = re.match(r"([^=:]+)[=:]", s)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), no)
    return lines


def _matrix(text, where):
    rows = [r for r in text.replace("\n", ";").split(";") if r.strip()]
    try:
        M = np.array([[float(v) for v in re.split(r"[,\s]+", r.strip())] for r in rows])
    except ValueError as e:
        raise ConfigError(f"{where}: {e}")
    if M.ndim != 2:
        raise ConfigError(f"{where}: rows have different lengths")
    return M


def _floats(text):
    return [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def parse_config(text, overrides=None):
    """Parse and validate a configuration document.

    ``overrides`` maps "section.key" to a string value and takes precedence.
    """
    lines = _line_index(text)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None,
                                   strict=True)
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"duplicate key {e.option!r} in [{e.section}]", e.lineno)
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"duplicate section [{e.section}]", e.lineno)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("key outside of a section", e.lineno)
    except configparser.ParsingError as e:
        raise ConfigError("cannot parse line", e.errors[0][0] if e.errors else None)

    values = {}
    for sec in cp.sections():
        name = sec.strip().lower()
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", lines.get((name, None)))
        for key, val in cp.items(sec):
            if key not in SCHEMA[name]:
                raise ConfigError(f"unknown key {key!r} in [{name}]", lines.get((name, key)))
            values[(name, key)] = val
    for k, v in (overrides or {}).items():
        sec, _, key = k.partition(".")
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError(f"unknown override {k!r}")
        values[(sec, key)] = str(v)
    for req in REQUIRED:
        if req not in values:
            raise ConfigError(f"missing required key {req[1]!r} in [{req[0]}]")

    def get(sec, key, conv, default=None):
        if (sec, key) not in values:
            return default
        raw = values[(sec, key)]
        try:
            return conv(raw)
        except (ValueError, TypeError, FuelGameError) as e:
            raise ConfigError(f"bad value for {key!r}: {e}", lines.get((sec, key)))

    def fail(msg, sec, key):
        raise ConfigError(msg, lines.get((sec, key)))

    N = get("game", "n_players", int)
    if N < 2:
        fail("n_players must be at least 2", "game", "n_players")
    alpha = get("game", "alpha", float)
    if not (alpha > 0 and math.isfinite(alpha)):
        fail(f"alpha must be positive, got {alpha}", "game", "alpha")
    variant = get("game", "variant", str, "").strip().lower()
    if variant and variant not in VARIANTS:
        fail(f"unknown variant {variant!r}", "game", "variant")
    adj = get("game", "adjacency", lambda s: _matrix(s, "adjacency"))
    if adj is None:
        if variant == "pooling":
            adj = np.ones((N, 1))
        elif variant == "dividing":
            adj = np.eye(N)
        else:
            fail("adjacency is required unless variant is pooling or dividing", "game", "adjacency")
    if adj.shape[0] != N:
        fail(f"adjacency has {adj.shape[0]} rows for {N} players", "game", "adjacency")
    M = get("game", "n_resources", int, adj.shape[1])
    if adj.shape[1] != M:
        fail(f"adjacency has {adj.shape[1]} columns for {M} resources", "game", "adjacency")
    if not np.all((adj == 0) | (adj == 1)):
        fail("adjacency entries must be 0 or 1", "game", "adjacency")
    if np.any(adj.sum(axis=1) == 0):
        fail("each player has access to at least one resource (zero adjacency row)",
             "game", "adjacency")
    if np.any(adj.sum(axis=0) == 0):
        fail("each resource must be accessible to at least one player", "game", "adjacency")

    cost_name = get("game", "cost", str, "quadratic").strip().lower()
    if cost_name == "quadratic":
        cost = CostFunction.quadratic()
    elif cost_name == "quadratic_logcosh":
        cost = CostFunction.quadratic_logcosh(get("game", "cost_eps", float, 0.1))
    else:
        fail(f"unknown cost {cost_name!r}", "game", "cost")
    try:
        spec = GameSpec(N, M, adj, alpha, cost, variant)
    except FuelGameError as e:
        raise ConfigError(str(e), lines.get(("game", "adjacency")))

    dt = get("numerics", "dt", float, 1e-3)
    try:
        params = SchemeParams(
            dt=dt,
            delta=get("numerics", "delta", float, None),
            horizon=get("numerics", "horizon", float, None),
            seed=get("numerics", "seed", int, 0),
            boundary_tol=get("numerics", "boundary_tol", float, 1e-9),
        )
    except FuelGameError as e:
        raise ConfigError(str(e), lines.get(("numerics", "dt")))

    cfg = RunConfig(spec=spec, params=params, raw=dict(values))
    cfg.paths = get("numerics", "paths", int, 1000)
    if cfg.paths < 2:
        fail("paths must be at least 2", "numerics", "paths")
    cfg.y_max = get("numerics", "y_max", float, None)
    cfg.qvi_tol = get("numerics", "qvi_tol", float, 1e-6)
    cfg.fd_step = get("numerics", "fd_step", float, None)
    cfg.n_se = get("numerics", "n_se", float, 3.0)

    sub = get("run", "subcommand", str, None)
    if sub is not None and sub not in SUBCOMMANDS:
        fail(f"unknown subcommand {sub!r}", "run", "subcommand")
    cfg.subcommand = sub
    cfg.output_dir = get("run", "output_dir", str, "out")
    cfg.start_x = np.array(get("run", "start_x", _floats, [0.0] * N))
    cfg.start_y = np.array(get("run", "start_y", _floats, [1.0] * M))
    if cfg.start_x.size != N:
        fail(f"start_x needs {N} entries", "run", "start_x")
    if cfg.start_y.size != M or np.any(cfg.start_y < 0):
        fail(f"start_y needs {M} non-negative entries", "run", "start_y")
    cfg.grid_player = get("run", "grid_player", int, 1) - 1
    if not 0 <= cfg.grid_player < N:
        fail("grid_player out of range", "run", "grid_player")
    g = get("run", "grid", _floats, [-2.0, 2.0, 41])
    if len(g) != 3 or g[2] < 1:
        fail("grid must be 'low high count'", "run", "grid")
    cfg.grid = (g[0], g[1], int(g[2]))
    cfg.record_every = get("run", "record_every", int, 1)
    cfg.perturbations = tuple(get("run", "perturbations", _floats, list(cfg.perturbations)))
    cfg.round_trip = get("run", "round_trip", float, 0.1)
    sa = get("run", "sharing_adjacency", lambda s: _matrix(s, "sharing_adjacency"), None)
    if sa is not None and sa.shape != (N, N):
        fail("sharing_adjacency must be N x N", "run", "sharing_adjacency")
    cfg.sharing_adjacency = sa
    cfg.compare_states = get("run", "compare_states", int, 0)
    cfg.compare_seed = get("run", "compare_seed", int, 0)
    return cfg
