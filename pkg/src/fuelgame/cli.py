"""Command line entry point: fuelgame SUBCOMMAND --config PATH [overrides]."""

import argparse
import csv
import json
import os
import sys

import numpy as np

from .boundary import BoundarySolution
from .config import SUBCOMMANDS, parse_config
from .core import JointState, classify_region, total_accessible
from .dynamics import WasteRoundTrip, simulate_batch
from .errors import ConfigError, DomainError, FuelGameError, HypothesisError
from .montecarlo import deviation_test, estimate_values, run_costs
from .value import ValueQuery, compare_games, game_values, qvi_residuals

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


class Outputs:
    """Writes files under the output directory and keeps the manifest."""

    def __init__(self, root, subcommand, seed):
        self.root = root
        self.sub = subcommand
        self.seed = seed
        self.files = []
        os.makedirs(root, exist_ok=True)

    def path(self, name):
        full = os.path.join(self.root, name)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        self.files.append(name)
        return full

    def csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])

    def text(self, name, body):
        with open(self.path(name), "w", newline="") as fh:
            fh.write(body)

    def write_manifest(self):
        name = os.path.join(self.root, "manifest.csv")
        entries = {}
        if os.path.exists(name):
            with open(name, newline="") as fh:
                for row in csv.DictReader(fh):
                    entries[row["file"]] = (row["subcommand"], row["seed"])
        for f in self.files:
            entries[f] = (self.sub, str(self.seed))
        with open(name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["file", "subcommand", "seed"])
            for f in sorted(entries):
                w.writerow([f, *entries[f]])


def _boundary_for(cfg, extra=0.0):
    spec = cfg.spec
    need = float(np.max(total_accessible(spec, cfg.start_y)))
    y_max = cfg.y_max or max(10.0, 1.2 * max(need, extra))
    return BoundarySolution.build(spec, y_max)


def cmd_boundary(cfg, out):
    b = _boundary_for(cfg)
    rows = []
    for y, x, s in zip(b.ys, b.xs, b.slopes):
        p = [b.p(x, k) for k in range(4)]
        rows.append([x, y, 1.0 / s, b.a_coeff(y), *p])
    out.csv("boundary.csv", ["x", "f_N", "f_N_prime", "A_N_at_fN", "p", "p1", "p2", "p3"], rows)
    return EXIT_OK


def _state_header(spec):
    return ([f"x{i + 1}" for i in range(spec.n_players)]
            + [f"y{j + 1}" for j in range(spec.n_resources)])


def cmd_value(cfg, out):
    spec = cfg.spec
    b = _boundary_for(cfg)
    N = spec.n_players
    lo, hi, n = cfg.grid
    header = _state_header(spec) + [f"v{i + 1}" for i in range(N)] + ["region"]
    for i in range(N):
        header += [f"pde_residual_{i + 1}", f"grad_plus_{i + 1}", f"grad_minus_{i + 1}"]
    rows = []
    for val in np.linspace(lo, hi, n):
        x = cfg.start_x.copy()
        x[cfg.grid_player] = val
        st = JointState(x, cfg.start_y)
        v = game_values(spec, b, st)
        row = [*x, *cfg.start_y, *v, str(classify_region(spec, b, st))]
        for i in range(N):
            try:
                r = qvi_residuals(ValueQuery(spec, b, st, i), cfg.fd_step, cfg.qvi_tol)
                row += [r.pde_residual, r.grad_plus, r.grad_minus]
            except DomainError:
                row += ["", "", ""]
        rows.append(row)
    out.csv("value.csv", header, rows)
    return EXIT_OK


def cmd_simulate(cfg, out):
    spec = cfg.spec
    b = _boundary_for(cfg)
    N, M = spec.n_players, spec.n_resources
    st = JointState(cfg.start_x, cfg.start_y)
    res = simulate_batch(spec, b, st, cfg.params, np.arange(cfg.paths), record=True,
                         record_every=cfg.record_every)
    header = (["t"] + _state_header(spec)
              + [f"xi_plus_{i + 1}" for i in range(N)] + [f"xi_minus_{i + 1}" for i in range(N)]
              + [f"eta_{f + 1}" for f in range(2 * N)] + ["region"])
    width = len(str(cfg.paths - 1))
    for k in range(cfg.paths):
        rec = res.path(k)
        rows = ([t, *rec.positions[s], *rec.resources[s], *rec.xi_plus[s], *rec.xi_minus[s],
                 *rec.local_times[s], rec.regions[s]] for s, t in enumerate(rec.times))
        out.csv(f"paths/path_{k:0{width}d}.csv", header, rows)
    lines = [json.dumps({"time": j.time, "player": j.player + 1, "side": "+" if j.side > 0 else "-",
                         "magnitude": j.magnitude, "consumed": list(j.consumed)})
             for j in res.jumps]
    out.text("jumps.jsonl", "".join(line + "\n" for line in lines))
    return EXIT_OK


def cmd_verify(cfg, out):
    spec = cfg.spec
    b = _boundary_for(cfg)
    st = JointState(cfg.start_x, cfg.start_y)
    rows, summary, ok = [], [], True
    reports = estimate_values(spec, b, st, cfg.params, cfg.paths)
    for r in reports:
        passed = abs(r.z_score) <= cfg.n_se
        ok &= passed
        rows.append(["value", r.player + 1, "", r.mean, r.std_error, r.analytic, r.z_score, passed])
        summary.append(f"{'PASS' if passed else 'FAIL'} value player {r.player + 1}: "
                       f"MC {r.mean:.6g} +/- {r.std_error:.2g} vs analytic {r.analytic:.6g} "
                       f"(z = {r.z_score:.2f})")
    base, _ = run_costs(spec, b, st, cfg.params, cfg.paths)
    for i in range(spec.n_players):
        perts = list(cfg.perturbations)
        if cfg.round_trip > 0 and 2 * cfg.round_trip <= total_accessible(spec, st.resources, i):
            perts.append(WasteRoundTrip(i, cfg.round_trip))
        for d in deviation_test(spec, b, st, cfg.params, i, perts, cfg.paths,
                                n_se=cfg.n_se, baseline=base):
            ok &= d.passed
            z = (d.j_dev - d.j_ne) / d.diff_se if d.diff_se > 0 else 0.0
            rows.append(["deviation", i + 1, d.perturbation, d.j_dev, d.diff_se, d.j_ne, z,
                         d.passed])
            summary.append(f"{'PASS' if d.passed else 'FAIL'} deviation player {i + 1} "
                           f"{d.perturbation}: J_dev - J_NE = {d.j_dev - d.j_ne:.3g} "
                           f"({z:.2f} SE)")
    out.csv("verify.csv", ["check", "player", "perturbation", "mean", "std_error", "reference",
                           "z", "passed"], rows)
    summary.append(f"overall: {'PASS' if ok else 'FAIL'}")
    out.text("verify_summary.txt", "\n".join(summary) + "\n")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_compare(cfg, out):
    spec = cfg.spec
    N = spec.n_players
    if cfg.spec.n_resources != N:
        raise ConfigError("compare needs one resource per player (M = N)")
    share = cfg.sharing_adjacency if cfg.sharing_adjacency is not None else spec.adjacency
    states = [(cfg.start_x, cfg.start_y)]
    if cfg.compare_states:
        rng = np.random.default_rng(cfg.compare_seed)
        states = [(rng.uniform(-0.2, 0.2, N), rng.uniform(0.1, 2.0, N))
                  for _ in range(cfg.compare_states)]
    pooled = max(float(np.sum(y)) for _, y in states)
    b = _boundary_for(cfg, extra=pooled)
    header = (_state_header(spec) + [f"v_pool_{i + 1}" for i in range(N)]
              + [f"v_share_{i + 1}" for i in range(N)] + [f"v_div_{i + 1}" for i in range(N)]
              + ["ordered"])
    rows, ok = [], True
    for x, y in states:
        try:
            c = compare_games(x, y, share, spec.discount, spec.cost, b)
        except HypothesisError:
            rows.append([*x, *y] + [""] * (3 * N) + ["outside"])
            continue
        ok &= c.ordered
        rows.append([*x, *y, *c.pooling, *c.sharing, *c.dividing, c.ordered])
    out.csv("compare.csv", header, rows)
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "boundary": cmd_boundary,
    "value": cmd_value,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "compare": cmd_compare,
}


def build_parser():
    p = _Parser(prog="fuelgame", description=__doc__)
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True)
    p.add_argument("--dt", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    return p


def dispatch(cfg, subcommand):
    out = Outputs(cfg.output_dir, subcommand, cfg.params.seed)
    status = COMMANDS[subcommand](cfg, out)
    out.write_manifest()
    return status


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        overrides = {}
        for flag, key in (("dt", "numerics.dt"), ("delta", "numerics.delta"),
                          ("horizon", "numerics.horizon"), ("seed", "numerics.seed"),
                          ("paths", "numerics.paths"), ("output_dir", "run.output_dir")):
            v = getattr(args, flag)
            if v is not None:
                overrides[key] = v
        for item in args.set:
            k, sep, v = item.partition("=")
            if not sep:
                raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
            overrides[k.strip()] = v.strip()
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise UsageError(f"cannot read config: {e}")
        cfg = parse_config(text, overrides)
        return dispatch(cfg, args.subcommand)
    except (UsageError, ConfigError) as e:
        print(f"fuelgame: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FuelGameError as e:
        print(f"fuelgame: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
