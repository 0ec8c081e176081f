"""Equilibrium dynamics: jump cascade, reflection geometry and path simulation.

The simulator advances many paths at once.  After each Brownian step the
player with the largest boundary excess (largest index on ties) pushes
toward the center, one player at a time, until every path is back in the
closed common waiting region.  Each push is capped at delta along the unit
reflection direction and aims at the exact landing point on the moving
face.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    JointState,
    POOLING,
    allocation_weights,
    boundary_excess,
    relative_positions,
    top_index,
    total_accessible,
)
from .errors import (
    AdmissibilityError,
    DimensionError,
    GeometryError,
    NumericError,
    SchemeError,
    SpecError,
)


@dataclass(frozen=True)
class Jump:
    time: float
    player: int
    side: int
    magnitude: float
    consumed: tuple


@dataclass(frozen=True)
class SchemeParams:
    dt: float = 1e-3
    delta: float = None
    horizon: float = None
    seed: int = 0
    boundary_tol: float = 1e-9
    max_pushes: int = 10_000

    def __post_init__(self):
        if not self.dt > 0:
            raise SpecError("dt must be positive")
        if self.delta is None:
            object.__setattr__(self, "delta", math.sqrt(self.dt))
        for name in ("dt", "delta", "boundary_tol"):
            if not getattr(self, name) > 0:
                raise SpecError(f"{name} must be positive")
        if self.horizon is not None and not self.horizon > 0:
            raise SpecError("horizon must be positive")

    def resolved_horizon(self, discount):
        """Explicit horizon, or the default with e^{-alpha T} = 1e-4."""
        if self.horizon is not None:
            return float(self.horizon)
        return math.log(1e4) / discount


# ---------------------------------------------------------------- cascade

def jump_cascade(spec, boundary, state, shifts=None, max_iter=1000, tol=1e-12,
                 time=0.0, trace=None):
    """Sequential jumps into the closed waiting region.

    Returns (state', jumps).  If ``trace`` is a list, the pre-jump state of
    every iteration is appended to it.
    """
    x = np.array(state.positions, dtype=float)
    y = np.array(state.resources, dtype=float)
    sh = np.zeros(spec.n_players) if shifts is None else np.asarray(shifts, dtype=float)
    jumps = []
    for _ in range(max_iter):
        cur = JointState(x, y)
        exc = boundary_excess(spec, boundary, cur, sh)
        i = top_index(exc)
        if not exc[i] > tol:
            return cur, jumps
        if trace is not None:
            trace.append(cur)
        xt = cur.relative[i]
        acc = total_accessible(spec, y, i)
        _, u = boundary.jump_root(xt, acc, sh[i])
        mag = acc - u
        if not mag > 0:
            break
        w = allocation_weights(spec, y, i)
        used = mag * w
        y = np.maximum(y - used, 0.0)
        if u == 0:
            y[spec.adjacency[i] > 0] = 0.0
        side = 1 if xt > 0 else -1
        x[i] -= side * mag
        jumps.append(Jump(time, i, side, mag, tuple(used.tolist())))
    cur = JointState(x, y)
    dist = float(np.max(boundary_excess(spec, boundary, cur, sh)))
    if dist > 1e-8:
        raise NumericError(
            f"jump cascade did not converge in {max_iter} iterations; "
            f"remaining excess {dist!r} after {len(jumps)} jumps"
        )
    return cur, jumps


def rank_diagnostic(spec, boundary, state):
    """Rank values F^i and the top-ranked player (largest index on ties).

    Pooling ranks by |x~^i|.  Otherwise the rank is the signed distance
    past the own threshold, |x~^i| - f^{-1}(acc_i), which orders players
    the same way the region classifier does; players without fuel rank -inf.
    """
    if spec.variant == POOLING:
        F = np.abs(state.relative)
    else:
        F = boundary_excess(spec, boundary, state)
    return F, top_index(F)


# ---------------------------------------------------------------- geometry

class GeometryModel:
    """Faces, inward normals and reflection directions of the waiting region.

    Face i (0 <= i < N) is x~^i = f^{-1}(acc_i), face N+i is
    x~^i = -f^{-1}(acc_i).  Vectors live in R^{N+M} (positions, resources).
    """

    def __init__(self, spec, boundary):
        self.spec = spec
        self.boundary = boundary
        self.n = spec.n_players
        self.m = spec.n_resources
        self.faces = [(i, +1) for i in range(self.n)] + [(i, -1) for i in range(self.n)]

    def thresholds(self, y):
        acc = total_accessible(self.spec, y)
        thr = np.full(self.n, np.inf)
        live = acc > 0
        thr[live] = self.boundary.f_inverse(acc[live])
        return thr

    def excess(self, x, y):
        return np.abs(relative_positions(x)) - self.thresholds(y)

    def in_region(self, x, y, closed=False, tol=0.0):
        e = self.excess(x, y)
        return bool(np.all(e <= tol)) if closed else bool(np.all(e < 0))

    def active_faces(self, x, y, tol=1e-9):
        xt = relative_positions(x)
        thr = self.thresholds(y)
        out = []
        for f, (i, s) in enumerate(self.faces):
            if np.isfinite(thr[i]) and abs(s * xt[i] - thr[i]) <= tol:
                out.append(f)
        return out

    def normal(self, face, y):
        i, s = self.faces[face]
        acc = total_accessible(self.spec, y, i)
        v = np.zeros(self.n + self.m)
        v[: self.n] = s / (self.n - 1)
        v[i] = -s
        v[self.n:] = self.boundary.f_inverse_prime(acc) * self.spec.adjacency[i]
        return v / np.linalg.norm(v)

    def reflection(self, face, y):
        i, s = self.faces[face]
        v = np.zeros(self.n + self.m)
        v[i] = -s
        v[self.n:] = -allocation_weights(self.spec, y, i)
        return v / np.linalg.norm(v)


def _feasible_face_sets(thr, rel=1e-9):
    n = len(thr)
    for signs in itertools.product((0, 1, -1), repeat=n):
        I = [i for i in range(n) if signs[i]]
        if not I:
            continue
        pinned = sum(signs[i] * thr[i] for i in I)
        free = sum(thr[k] for k in range(n) if not signs[k])
        if abs(pinned) <= free + rel * sum(thr):
            yield [i if signs[i] > 0 else n + i for i in I]


def compatibility_samples(geom, y_low, y_high, n_random=200, seed=0):
    rng = np.random.default_rng(seed)
    m = geom.m
    ys = [np.full(m, v) for v in np.geomspace(y_low, y_high, 9)]
    ys += [np.array(c, dtype=float) for c in itertools.product((y_low, y_high), repeat=min(m, 8))
           if len(c) == m]
    ys += list(np.exp(rng.uniform(math.log(y_low), math.log(y_high), size=(n_random, m))))
    return ys


def check_reflection_compatibility(geom, y_low=0.1, y_high=10.0, n_random=200, seed=0,
                                   floor=1e-3):
    """Smallest of min_k <mean_I n_i, r_k> and min_k <mean_I r_i, n_k> over
    feasible face sets and sampled resource levels in [y_low, y_high]^M.
    """
    if y_low < floor:
        raise GeometryError(
            f"resource box must stay at least {floor} away from exhaustion; got {y_low}"
        )
    worst = np.inf
    for y in compatibility_samples(geom, y_low, y_high, n_random, seed):
        thr = geom.thresholds(y)
        normals = [geom.normal(f, y) for f in range(2 * geom.n)]
        refl = [geom.reflection(f, y) for f in range(2 * geom.n)]
        for I in _feasible_face_sets(thr):
            nbar = np.mean([normals[f] for f in I], axis=0)
            rbar = np.mean([refl[f] for f in I], axis=0)
            a = min(min(nbar @ refl[k] for k in I), min(rbar @ normals[k] for k in I))
            worst = min(worst, a)
    if not worst > 0:
        raise GeometryError(f"reflection compatibility fails: minimum inner product {worst!r}")
    return float(worst)


def reflection_lower_estimate(boundary, n_players, acc_low, acc_high, n_grid=2001):
    """k / sqrt((N+1)/(N-1) + (N+1) K) with k, K the extreme slopes |(f^{-1})'|."""
    acc = np.linspace(acc_low, acc_high, n_grid)
    d = np.abs(boundary.f_inverse_prime(acc))
    k, K = float(d.min()), float(d.max())
    N = n_players
    return k / math.sqrt((N + 1) / (N - 1) + (N + 1) * K)


# ---------------------------------------------------------------- noise

class PathNoise:
    """Brownian increments from per-path counter-based streams.

    Path k draws from Philox keyed by (seed, k), so its noise does not
    depend on which other paths run alongside it.  Increments are drawn at
    the base resolution dt/substeps and summed in groups of ``substeps``,
    which lets runs at dt, dt/2, ... share one Brownian path.
    """

    def __init__(self, seed, path_ids, n_players, dt, substeps=1, chunk=128):
        self.path_ids = np.asarray(path_ids)
        self.n = n_players
        self.sub = int(substeps)
        self.scale = math.sqrt(dt / self.sub)
        self.chunk = chunk
        self.gens = [
            np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(k)])))
            for k in self.path_ids
        ]

    def draw(self, n_steps):
        """Increments for the next n_steps coarse steps, shape (n_steps, P, N)."""
        P = len(self.gens)
        buf = np.empty((P, n_steps * self.sub, self.n))
        for p, g in enumerate(self.gens):
            g.standard_normal(out=buf[p])
        if self.sub > 1:
            buf = buf.reshape(P, n_steps, self.sub, self.n).sum(axis=2)
        buf *= self.scale
        return buf.transpose(1, 0, 2)

    def chunks(self, n_steps):
        done = 0
        while done < n_steps:
            k = min(self.chunk, n_steps - done)
            yield self.draw(k)
            done += k


# ---------------------------------------------------------------- engine

@dataclass
class PathRecord:
    times: np.ndarray
    positions: np.ndarray
    resources: np.ndarray
    xi_plus: np.ndarray
    xi_minus: np.ndarray
    local_times: np.ndarray
    regions: list
    jumps: list = field(default_factory=list)

    def state(self, k):
        return JointState(self.positions[k], self.resources[k])


@dataclass
class BatchResult:
    cost: np.ndarray            # (P, N) discounted running cost per player
    final_positions: np.ndarray
    final_resources: np.ndarray
    xi_plus: np.ndarray
    xi_minus: np.ndarray
    local_times: np.ndarray
    jumps: list
    max_abs_relative: float
    n_pushes: int
    record: dict = None

    def path(self, k):
        r = self.record
        if r is None:
            raise ValueError("run was not recorded")
        return PathRecord(r["times"], r["positions"][:, k], r["resources"][:, k],
                          r["xi_plus"][:, k], r["xi_minus"][:, k], r["local_times"][:, k],
                          [_label(c) for c in r["regions"][:, k]], list(self.jumps))


def _label(code):
    code = int(code)
    if code == 0:
        return "W"
    return f"A{abs(code)}{'+' if code > 0 else '-'}"


def region_codes(spec, boundary, X, Y, shifts=None, tol=0.0):
    """Vectorized region label codes: 0 waiting, +/-(i+1) for player i acting."""
    xt = relative_positions(X)
    acc = Y @ spec.adjacency.T
    thr = _thresholds(boundary, acc, shifts)
    e = np.abs(xt) - thr
    n = spec.n_players
    i = n - 1 - np.argmax(e[:, ::-1], axis=1)
    top = e[np.arange(len(e)), i]
    side = np.where(xt[np.arange(len(e)), i] >= 0, 1, -1)
    return np.where(top >= -tol, side * (i + 1), 0)


def _thresholds(boundary, acc, shifts):
    thr = np.full(acc.shape, np.inf)
    live = acc > 0
    if np.any(live):
        thr[live] = boundary.threshold(acc[live])
        if shifts is not None:
            thr = thr - np.broadcast_to(shifts, acc.shape)
    return thr


@dataclass(frozen=True)
class WasteRoundTrip:
    """Player pushes out and back by ``size`` at time 0, burning 2*size fuel."""
    player: int
    size: float = 0.1


def simulate_batch(spec, boundary, start, params, path_ids, shifts=None, waste=None,
                   record=False, record_every=1, substeps=1, horizon=None):
    """Simulate the equilibrium (or a one-player deviation) for many paths.

    ``shifts`` tightens each player's threshold by the given amount;
    ``waste`` applies a WasteRoundTrip at time 0.
    """
    n, A = spec.n_players, spec.adjacency
    sh = None if shifts is None else np.asarray(shifts, dtype=float)[:, None]
    T = params.resolved_horizon(spec.discount) if horizon is None else horizon
    dt = params.dt
    n_steps = int(math.ceil(T / dt - 1e-9))
    P = len(path_ids)

    s0, jumps = jump_cascade(spec, boundary, start, shifts=None if sh is None else sh[:, 0])
    x0, y0 = np.array(s0.positions), np.array(s0.resources)
    xi_p0 = np.zeros(n)
    xi_m0 = np.zeros(n)
    for j in jumps:
        (xi_p0 if j.side > 0 else xi_m0)[j.player] += j.magnitude
    if waste is not None:
        i = waste.player
        acc = total_accessible(spec, y0, i)
        if 2 * waste.size > acc:
            raise AdmissibilityError(
                f"round trip of {waste.size} needs {2 * waste.size} fuel, player has {acc}"
            )
        y0 = np.maximum(y0 - 2 * waste.size * allocation_weights(spec, y0, i), 0.0)
        xi_p0[i] += waste.size
        xi_m0[i] += waste.size

    # players-first layout: rows are players (or resources), columns paths
    X = np.repeat(x0[:, None], P, axis=1)
    Y = np.repeat(y0[:, None], P, axis=1)
    XIp = np.repeat(xi_p0[:, None], P, axis=1)
    XIm = np.repeat(xi_m0[:, None], P, axis=1)
    ETA = np.zeros((2 * n, P))
    acc = A @ Y
    thr = _thresholds(boundary, acc, sh)
    C = (n * np.eye(n) - np.ones((n, n))) / (n - 1)

    h, a, alpha = spec.cost.h, spec.a, spec.discount
    tol, delta = params.boundary_tol, params.delta

    J = np.zeros((n, P))
    xt = C @ X
    prev = h(a * xt)
    max_rel = float(np.max(np.abs(xt)))
    pushes_total = 0

    rec = None
    if record:
        rec = {k: [] for k in ("times", "positions", "resources", "xi_plus", "xi_minus",
                               "local_times", "regions")}

        def snapshot(t):
            rec["times"].append(t)
            rec["positions"].append(X.T.copy())
            rec["resources"].append(Y.T.copy())
            rec["xi_plus"].append(XIp.T.copy())
            rec["xi_minus"].append(XIm.T.copy())
            rec["local_times"].append(ETA.T.copy())
            rec["regions"].append(region_codes(spec, boundary, X.T, Y.T,
                                               None if sh is None else sh[:, 0], tol))

        snapshot(0.0)

    noise = PathNoise(params.seed, path_ids, n, dt, substeps=substeps)
    k = 0
    for block in noise.chunks(n_steps):
        block = np.ascontiguousarray(block.transpose(0, 2, 1))
        for dW in block:
            k += 1
            X += dW
            xt = C @ X
            S = np.nonzero((np.abs(xt) - thr).max(axis=0) > tol)[0]
            it = 0
            while S.size:
                it += 1
                if it > params.max_pushes:
                    raise SchemeError(
                        f"more than {params.max_pushes} pushes in one step; reduce dt or raise delta"
                    )
                xs = xt[:, S]
                es = np.abs(xs) - thr[:, S]
                i = n - 1 - np.argmax(es[::-1], axis=0)
                cols = np.arange(S.size)
                m = es[i, cols]
                keep = m > tol
                if not np.all(keep):
                    S, i, m, cols = S[keep], i[keep], m[keep], cols[keep]
                    if not S.size:
                        break
                xi_ = xs[i, cols]
                side = np.where(xi_ >= 0, 1.0, -1.0)
                acc_i = acc[i, S]
                shift_i = 0.0 if sh is None else sh[i, 0]
                target = _landing_amount(boundary, m, np.abs(xi_), acc_i, shift_i)
                W = _weights_for(A, Y[:, S], i)
                c = 1.0 / np.sqrt(1.0 + np.sum(W * W, axis=0))
                dxi = np.minimum(np.minimum(target, delta * c), acc_i)
                X[i, S] -= side * dxi
                Y[:, S] -= dxi * W
                exhausted = dxi >= acc_i
                if np.any(exhausted):
                    ex = S[exhausted]
                    Y[:, ex] = np.where(A[i[exhausted]].T > 0, 0.0, Y[:, ex])
                np.maximum(Y, 0.0, out=Y)
                plus = side > 0
                XIp[i[plus], S[plus]] += dxi[plus]
                XIm[i[~plus], S[~plus]] += dxi[~plus]
                face = np.where(plus, i, n + i)
                ETA[face, S] += dxi / c
                acc[:, S] = A @ Y[:, S]
                thr[:, S] = _thresholds(boundary, acc[:, S], sh)
                xt[:, S] = C @ X[:, S]
                pushes_total += S.size
            cur = h(a * xt)
            t1 = k * dt
            J += 0.5 * dt * (math.exp(-alpha * (t1 - dt)) * prev + math.exp(-alpha * t1) * cur)
            prev = cur
            max_rel = max(max_rel, float(np.abs(xt).max()))
            if record and k % record_every == 0:
                snapshot(t1)

    if rec is not None:
        rec = {key: np.array(v) for key, v in rec.items()}
    return BatchResult(J.T, X.T, Y.T, XIp.T, XIm.T, ETA.T, jumps, max_rel, pushes_total, rec)


def _weights_for(A, Y, players):
    """Allocation weights (M, S) of player players[s] at resource column Y[:, s]."""
    num = A[players].T * Y
    tot = num.sum(axis=0)
    safe = np.where(tot > 0, tot, 1.0)
    return np.where(tot > 0, num / safe, 0.0)


def _landing_amount(boundary, excess, abs_rel, acc, shift, iters=8):
    """Control amount d with |x~| - d = f^{-1}(acc - d) - shift (vectorized Newton).

    The excess is concave decreasing in d, so Newton from d = 0 approaches
    the root from above after the first step; capped at acc.
    """
    d = np.zeros_like(excess)
    for _ in range(iters):
        u = np.maximum(acc - d, 0.0)
        g = boundary.threshold(u) - shift
        e = abs_rel - d - g
        slope = 1.0 - boundary.threshold_slope(u)
        nxt = np.minimum(d + e / slope, acc)
        moved = np.abs(nxt - d)
        d = nxt
        if np.all(moved <= 1e-15 * (1.0 + np.abs(d))):
            break
    return np.maximum(d, 0.0)


def simulate_path(spec, boundary, start, params, path_id=0, record_every=1, shifts=None):
    res = simulate_batch(spec, boundary, start, params, [path_id], shifts=shifts,
                         record=True, record_every=record_every)
    return res.path(0)


def reflect_step(geom, state, increment, params):
    """One Brownian step followed by pushes back into the closed waiting region.

    Returns (state', pushes) where pushes maps face index -> accumulated
    local time.
    """
    spec, boundary = geom.spec, geom.boundary
    x = np.array(state.positions, dtype=float) + np.asarray(increment, dtype=float)
    y = np.array(state.resources, dtype=float)
    pushes = {}
    for _ in range(params.max_pushes):
        cur = JointState(x, y)
        exc = boundary_excess(spec, boundary, cur)
        i = top_index(exc)
        if not exc[i] > params.boundary_tol:
            return cur, pushes
        xt = cur.relative[i]
        acc = total_accessible(spec, y, i)
        target = float(_landing_amount(boundary, np.array([exc[i]]), np.array([abs(xt)]),
                                       np.array([acc]), 0.0)[0])
        w = allocation_weights(spec, y, i)
        c = 1.0 / math.sqrt(1.0 + float(w @ w))
        d = min(target, params.delta * c, acc)
        side = 1 if xt > 0 else -1
        x[i] -= side * d
        y = np.maximum(y - d * w, 0.0)
        if d >= acc:
            y[spec.adjacency[i] > 0] = 0.0
        f = i if side > 0 else geom.n + i
        pushes[f] = pushes.get(f, 0.0) + d / c
    raise SchemeError(f"more than {params.max_pushes} pushes in one step")


# ---------------------------------------------------------------- explicit map

def two_player_explicit(start, increments, boundary):
    """Two-player pooling equilibrium from the running-maximum representation.

    ``increments`` has shape (n_steps, 2) or (n_steps, P, 2).  Player 1 never
    controls; player 2's cumulative pushes are the smallest non-decreasing
    processes keeping D = x^1 - x^2 within +/- f^{-1}(y - xi^+ - xi^-).
    Returns dict of arrays: positions (n+1, P, 2), resources (n+1, P),
    xi_plus, xi_minus (n+1, P).
    """
    inc = np.asarray(increments, dtype=float)
    single = inc.ndim == 2
    if single:
        inc = inc[:, None, :]
    if inc.shape[-1] != 2:
        raise DimensionError("the explicit map is for two players")
    x1_0, x2_0 = (float(v) for v in start.positions)
    y0 = float(np.sum(start.resources))
    n_steps, P, _ = inc.shape
    B = np.concatenate([np.zeros((1, P, 2)), np.cumsum(inc, axis=0)], axis=0)
    D = (x1_0 - x2_0) + B[:, :, 0] - B[:, :, 1]
    up = np.zeros(P)
    down = np.zeros(P)
    ups = np.empty((n_steps + 1, P))
    downs = np.empty((n_steps + 1, P))
    rem = np.full(P, y0)
    thr = np.full(P, np.inf)
    if y0 > 0:
        thr[:] = boundary.f_inverse(y0)
    for k in range(n_steps + 1):
        # at most one side can bind after a push, so two passes suffice
        for _ in range(2):
            d = D[k] - up + down
            hi = np.nonzero(d > thr)[0]
            lo = np.nonzero(-d > thr)[0]
            if not (hi.size or lo.size):
                break
            if hi.size:
                up[hi] += _explicit_increment(boundary, d[hi], rem[hi])
            if lo.size:
                down[lo] += _explicit_increment(boundary, -d[lo], rem[lo])
            moved = np.concatenate([hi, lo])
            rem[moved] = np.maximum(y0 - up[moved] - down[moved], 0.0)
            live = rem[moved] > 0
            thr[moved] = np.inf
            if np.any(live):
                thr[moved[live]] = boundary.f_inverse(rem[moved[live]])
        ups[k] = up
        downs[k] = down
    pos = np.empty((n_steps + 1, P, 2))
    pos[:, :, 0] = x1_0 + B[:, :, 0]
    pos[:, :, 1] = x2_0 + B[:, :, 1] + ups - downs
    res = np.maximum(y0 - ups - downs, 0.0)
    out = {"positions": pos, "resources": res, "xi_plus": ups, "xi_minus": downs}
    if single:
        out = {k: v[:, 0] for k, v in out.items()}
    return out


def _explicit_increment(boundary, d, rem):
    """Smallest increment bringing d back onto f^{-1}(rem - increment)."""
    out = np.empty_like(d)
    for k in range(d.size):
        _, u = boundary.jump_root(float(d[k]), float(rem[k]))
        out[k] = rem[k] - u
    return out
