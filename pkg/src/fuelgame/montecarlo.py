"""Monte Carlo estimates of realized costs and deviation tests."""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import relative_positions, total_accessible
from .dynamics import WasteRoundTrip, simulate_batch
from .errors import AdmissibilityError
from .value import game_values

SHARD_SIZE = 2000


def worker_count():
    raw = os.environ.get("FUELGAME_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class RunningStats:
    """Count, mean and centered sum of squares; merges associatively."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values):
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return cls()
        mu = float(np.mean(v))
        return cls(int(v.size), mu, float(np.sum((v - mu) ** 2)))

    def merge(self, other):
        if self.n == 0:
            return other
        if other.n == 0:
            return self
        n = self.n + other.n
        d = other.mean - self.mean
        mean = self.mean + d * other.n / n
        m2 = self.m2 + other.m2 + d * d * self.n * other.n / n
        return RunningStats(n, mean, m2)

    @property
    def variance(self):
        return self.m2 / (self.n - 1) if self.n > 1 else float("nan")

    @property
    def std_error(self):
        return math.sqrt(self.variance / self.n) if self.n > 1 else float("nan")


def summary_stats(records):
    """Merge a sequence of RunningStats (pairwise, order-preserving)."""
    recs = list(records)
    if not recs:
        return RunningStats()
    while len(recs) > 1:
        nxt = [recs[k].merge(recs[k + 1]) for k in range(0, len(recs) - 1, 2)]
        if len(recs) % 2:
            nxt.append(recs[-1])
        recs = nxt
    return recs[0]


@dataclass(frozen=True)
class EstimateReport:
    player: int
    mean: float
    std_error: float
    n_paths: int
    horizon_bias_bound: float
    analytic: float
    z_score: float


def run_costs(spec, boundary, start, params, n_paths, shifts=None, waste=None,
              first_path=0, horizon=None):
    """Per-path discounted costs (n_paths, N) and final centered positions (n_paths, N)."""
    ids = np.arange(first_path, first_path + n_paths)
    shards = [ids[k:k + SHARD_SIZE] for k in range(0, n_paths, SHARD_SIZE)]

    def one(chunk):
        return simulate_batch(spec, boundary, start, params, chunk, shifts=shifts,
                              waste=waste, horizon=horizon)

    workers = min(worker_count(), len(shards))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(one, shards))
    else:
        results = [one(c) for c in shards]
    J = np.concatenate([r.cost for r in results], axis=0)
    finals = np.concatenate([relative_positions(r.final_positions) for r in results], axis=0)
    return J, finals


def _bias_bound(spec, boundary, params, finals, horizon):
    """e^{-alpha T} E p(x~_T), the discounted cost after T if nobody acts again.

    Exact for the truncation when no fuel is left at T; otherwise an
    estimate, since later pushes change the continuation cost.
    """
    T = params.resolved_horizon(spec.discount) if horizon is None else horizon
    tail = np.mean(boundary.p(finals.ravel(), 0).reshape(finals.shape), axis=0)
    return math.exp(-spec.discount * T) * tail


def _report(i, costs, analytic, bias):
    st = RunningStats.of(costs)
    se = st.std_error
    if se > 0:
        z = (st.mean - analytic) / se
    else:
        z = 0.0 if st.mean == analytic else math.copysign(math.inf, st.mean - analytic)
    return EstimateReport(i, st.mean, se, st.n, bias, float(analytic), z)


def estimate_values(spec, boundary, start, params, n_paths, horizon=None):
    """Reports for every player from one batch of equilibrium paths."""
    if n_paths < 2:
        raise ValueError("need at least two paths")
    J, finals = run_costs(spec, boundary, start, params, n_paths, horizon=horizon)
    v = game_values(spec, boundary, start)
    bias = _bias_bound(spec, boundary, params, finals, horizon)
    return [_report(i, J[:, i], v[i], float(bias[i])) for i in range(spec.n_players)]


def estimate_value(spec, boundary, start, params, player, n_paths, horizon=None):
    return estimate_values(spec, boundary, start, params, n_paths, horizon)[player]


@dataclass(frozen=True)
class DeviationResult:
    player: int
    perturbation: str
    j_dev: float
    j_ne: float
    diff_se: float
    passed: bool


def threshold_shift(spec, boundary, start, player, eps):
    """Shift vector for player reflecting at f^{-1}(.) - eps; rejects shifts
    that would put the threshold at or below zero."""
    acc = total_accessible(spec, start.resources, player)
    if acc > 0 and float(boundary.f_inverse(acc)) - eps <= 0:
        raise AdmissibilityError(
            f"shift {eps} makes player {player + 1}'s threshold non-positive"
        )
    sh = np.zeros(spec.n_players)
    sh[player] = eps
    return sh


def deviation_test(spec, boundary, start, params, player, perturbations, n_paths,
                   horizon=None, n_se=3.0, baseline=None):
    """Compare player's cost under one-player deviations with the equilibrium cost.

    Perturbations are floats (threshold shifts) or WasteRoundTrip objects.
    All runs share the same path streams, and the standard error is that of
    the paired per-path difference.
    """
    if baseline is None:
        baseline, _ = run_costs(spec, boundary, start, params, n_paths, horizon=horizon)
    base = baseline[:, player]
    rows = []
    for pert in perturbations:
        if isinstance(pert, WasteRoundTrip):
            J, _ = run_costs(spec, boundary, start, params, n_paths, waste=pert, horizon=horizon)
            label = f"round_trip({pert.size!r})"
        else:
            sh = threshold_shift(spec, boundary, start, player, float(pert))
            J, _ = run_costs(spec, boundary, start, params, n_paths, shifts=sh, horizon=horizon)
            label = f"shift({float(pert)!r})"
        dev = J[:, player]
        diff = RunningStats.of(dev - base)
        se = diff.std_error
        ok = diff.mean >= -n_se * se if se > 0 else diff.mean >= 0
        rows.append(DeviationResult(player, label, float(dev.mean()), float(base.mean()),
                                    se, bool(ok)))
    return rows
