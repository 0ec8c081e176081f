import math

import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import quad_boundary

from fuelgame import GameSpec, GeometryModel, JointState, SchemeParams, allocation_weights
from fuelgame import check_reflection_compatibility, jump_cascade, rank_diagnostic, reflect_step
from fuelgame import simulate_path, total_accessible, two_player_explicit
from fuelgame.core import boundary_excess, classify_region, top_index
from fuelgame.dynamics import PathNoise, WasteRoundTrip, reflection_lower_estimate, simulate_batch
from fuelgame.errors import AdmissibilityError, GeometryError, SchemeError, SpecError

SHARE3 = np.eye(3) + np.eye(3, k=1)


def _specs3():
    return [GameSpec.pooling(3, 1.0), GameSpec.dividing(3, 1.0), GameSpec.sharing(SHARE3, 1.0)]


# ---------------------------------------------------------------- cascade

def test_single_exterior_player_lands_on_boundary(b3):
    spec = GameSpec.dividing(3, 1.0)
    y = np.array([0.8, 1.0, 1.0])
    st = JointState([1.5, 0.0, 0.0], y)
    out, jumps = jump_cascade(spec, b3, st)
    assert len(jumps) == 1 and jumps[0].player == 0 and jumps[0].side == 1
    xt = out.relative[0]
    assert abs(xt - b3.f_inverse(out.resources[0])) < 1e-10
    assert abs(jumps[0].magnitude - (y[0] - out.resources[0])) < 1e-12


def test_symmetric_two_player_exterior_goes_to_player_two(b2):
    spec = GameSpec.pooling(2, 1.0)
    d = b2.f_inverse(0.5) + 0.3
    out, jumps = jump_cascade(spec, b2, JointState([-d / 2, d / 2], [0.5]))
    assert jumps[0].player == 1
    assert len(jumps) == 1


def test_cascade_exhaustion_frees_the_rest(b2):
    spec = GameSpec.pooling(2, 1.0)
    out, jumps = jump_cascade(spec, b2, JointState([0.0, 5.0], [0.3]))
    assert out.resources[0] == 0.0
    assert abs(jumps[0].magnitude - 0.3) < 1e-15
    np.testing.assert_allclose(out.relative, [-4.7, 4.7])


def _relaxation(spec, b, st, step=1e-4):
    """Small-step pushes by the top-excess player; the final step is bisected.

    Returns None when two players are ever outside at once, since the
    outcome then depends on how simultaneous pushes are interleaved.
    """
    x = np.array(st.positions)
    y = np.array(st.resources)
    for _ in range(10 ** 5):
        e = boundary_excess(spec, b, JointState(x, y))
        if np.sum(e > 1e-12) > 1:
            return None
        i = top_index(e)
        if e[i] <= 1e-12:
            return x, y
        acc = total_accessible(spec, y, i)
        w = allocation_weights(spec, y, i)
        s = np.sign(JointState(x, y).relative[i])

        def moved(d):
            xx = x.copy()
            xx[i] -= s * d
            yy = np.maximum(y - d * w, 0)
            # continuous in d: the threshold tends to x0 as the fuel runs out
            ex = abs(JointState(xx, yy).relative[i]) - b.f_inverse(max(acc - d, 0.0))
            return xx, yy, ex

        d = min(step, acc)
        if moved(d)[2] < 0:
            d = brentq(lambda t: moved(t)[2], 0.0, d, xtol=1e-15)
        x, y, _ = moved(d)
        if d >= acc:
            y[spec.adjacency[i] > 0] = 0.0
    raise AssertionError("relaxation did not settle")


def test_cascade_matches_relaxation_oracle(b3):
    rng = np.random.default_rng(11)
    checked = 0
    for spec in _specs3():
        for _ in range(40):
            st = JointState(rng.uniform(-1.6, 1.6, 3), rng.uniform(0.2, 1.5, spec.n_resources))
            if classify_region(spec, b3, st).is_waiting:
                continue
            ref = _relaxation(spec, b3, st)
            if ref is None:
                continue
            out, _ = jump_cascade(spec, b3, st)
            assert np.max(np.abs(out.positions - ref[0])) < 1e-6
            assert np.max(np.abs(out.resources - ref[1])) < 1e-6
            checked += 1
    assert checked >= 6


def test_cascade_trace_and_rank(b3):
    spec = GameSpec.sharing(SHARE3, 1.0)
    trace = []
    st = JointState([2.0, -0.5, -1.0], [0.4, 0.9, 1.1])
    out, jumps = jump_cascade(spec, b3, st, trace=trace)
    assert len(trace) == len(jumps) >= 1
    for s, j in zip(trace, jumps):
        assert rank_diagnostic(spec, b3, s)[1] == j.player
    assert classify_region(spec, b3, out).is_waiting or np.max(boundary_excess(spec, b3, out)) <= 1e-8


def test_rank_diagnostic_examples(b3):
    pool = GameSpec.pooling(3, 1.0)
    st = JointState([0.2, -0.5, 0.1], [1.0])
    F, top = rank_diagnostic(pool, b3, st)
    np.testing.assert_allclose(F, np.abs(st.relative))
    F, top = rank_diagnostic(pool, b3, JointState([0.0, 0.0, 0.0], [1.0]))
    assert np.all(F == F[0]) and top == 2
    rng = np.random.default_rng(5)
    for spec in _specs3():
        for _ in range(50):
            st = JointState(rng.uniform(-2, 2, 3), rng.uniform(0.0, 1.5, spec.n_resources))
            lab = classify_region(spec, b3, st)
            if not lab.is_waiting:
                assert rank_diagnostic(spec, b3, st)[1] == lab.player


# ---------------------------------------------------------------- geometry

def test_normals_and_reflections(b2, b3):
    pool = GeometryModel(GameSpec.pooling(2, 1.0), b2)
    n = pool.normal(0, [1.0])
    g1 = b2.f_inverse_prime(1.0)
    np.testing.assert_allclose(n, np.array([-1.0, 1.0, g1]) / math.sqrt(2 + g1 * g1))
    div = GeometryModel(GameSpec.dividing(3, 1.0), b3)
    r = div.reflection(1, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(r, np.array([0, -1, 0, 0, -1, 0]) / math.sqrt(2))
    rng = np.random.default_rng(2)
    for _ in range(100):
        y = rng.uniform(0.1, 3.0, 3)
        for f in range(6):
            assert abs(np.linalg.norm(div.normal(f, y)) - 1) < 1e-14
            assert abs(np.linalg.norm(div.reflection(f, y)) - 1) < 1e-14


def test_single_face_inner_product_dividing(b2):
    geom = GeometryModel(GameSpec.dividing(2, 1.0), b2)
    y = [1.0, 1.0]
    g1 = b2.f_inverse_prime(1.0)
    c = 1 / math.sqrt(2 + g1 * g1)
    cp = 1 / math.sqrt(2)
    ip = geom.normal(0, y) @ geom.reflection(0, y)
    assert abs(ip - c * cp * (1 - g1)) < 1e-14
    assert ip > -c * cp * g1 > 0


@pytest.mark.parametrize("spec", [GameSpec.pooling(3, 1.0), GameSpec.dividing(3, 1.0),
                                  GameSpec.sharing(SHARE3, 1.0)])
def test_compatibility_beats_lower_estimate(spec):
    b = quad_boundary(3, 1.0, 31.0)
    a = check_reflection_compatibility(GeometryModel(spec, b), n_random=50)
    acc_hi = 10.0 * spec.adjacency.sum(axis=1).max()
    assert a >= reflection_lower_estimate(b, 3, 0.1, acc_hi) > 0


def test_compatibility_rejects_degenerate_box(b2):
    with pytest.raises(GeometryError):
        check_reflection_compatibility(GeometryModel(GameSpec.pooling(2, 1.0), b2), y_low=0.0)


# ---------------------------------------------------------------- reflect_step

def test_reflect_step_interior(b2):
    geom = GeometryModel(GameSpec.pooling(2, 1.0), b2)
    st = JointState([0.0, 0.1], [1.0])
    out, pushes = reflect_step(geom, st, [0.01, -0.02], SchemeParams())
    np.testing.assert_allclose(out.positions, [0.01, 0.08])
    assert pushes == {} and out.resources[0] == 1.0


def test_reflect_step_one_face_overshoot(b2):
    geom = GeometryModel(GameSpec.pooling(2, 1.0), b2)
    y = 1.0
    g = b2.f_inverse(y)
    st = JointState([0.0, g - 0.001], [y])
    eps = 0.004
    out, pushes = reflect_step(geom, st, [0.0, eps], SchemeParams(dt=1e-3))
    # |x~| - d = g(y - d), solved independently
    d = brentq(lambda d: g + eps - 0.001 - d - b2.f_inverse(y - d), 0.0, 0.01, xtol=1e-15)
    assert abs(out.resources[0] - (y - d)) < 1e-12
    assert abs(out.relative[1] - b2.f_inverse(out.resources[0])) < 1e-9
    assert set(pushes) == {1}
    assert abs(pushes[1] - d * math.sqrt(2)) < 1e-12


def test_reflect_step_without_fuel_is_free(b2):
    geom = GeometryModel(GameSpec.pooling(2, 1.0), b2)
    st = JointState([0.0, 3.0], [0.0])
    out, pushes = reflect_step(geom, st, [0.0, 0.5], SchemeParams())
    assert pushes == {} and out.positions[1] == 3.5


def test_reflect_step_push_budget(b2):
    geom = GeometryModel(GameSpec.pooling(2, 1.0), b2)
    st = JointState([0.0, 0.0], [1.0])
    with pytest.raises(SchemeError):
        reflect_step(geom, st, [0.0, 2.0], SchemeParams(dt=1e-6, max_pushes=3))


# ---------------------------------------------------------------- paths

def test_scheme_params_validation_and_horizon():
    p = SchemeParams(dt=1e-4)
    assert abs(p.delta - 1e-2) < 1e-15
    assert abs(math.exp(-2.0 * p.resolved_horizon(2.0)) - 1e-4) < 1e-15
    with pytest.raises(SpecError):
        SchemeParams(dt=-1.0)


def test_noise_is_per_path_and_substeps_aggregate():
    a = PathNoise(4, [0, 1, 2], 2, 1e-3).draw(10)
    b = PathNoise(4, [2], 2, 1e-3).draw(10)
    np.testing.assert_array_equal(a[:, 2], b[:, 0])
    fine = PathNoise(4, [0], 2, 1e-3 / 4).draw(40)
    coarse = PathNoise(4, [0], 2, 1e-3, substeps=4).draw(10)
    np.testing.assert_allclose(coarse[:, 0], fine[:, 0].reshape(10, 4, 2).sum(axis=1),
                               atol=1e-15)


def test_interior_path_is_pure_brownian(b2):
    spec = GameSpec.pooling(2, 1.0)
    prm = SchemeParams(dt=1e-3, seed=9, horizon=0.05)
    rec = simulate_path(spec, b2, JointState([0.0, 0.0], [1.0]), prm, path_id=3)
    inc = PathNoise(9, [3], 2, 1e-3).draw(50)[:, 0]
    np.testing.assert_allclose(rec.positions[1:], np.cumsum(inc, axis=0), atol=1e-14)
    assert np.all(rec.resources == 1.0) and set(rec.regions) == {"W"}


def test_paths_stay_in_closed_region_and_fuel_decreases(b3):
    for spec in _specs3():
        prm = SchemeParams(dt=1e-3, seed=1, horizon=2.0)
        start = JointState([0.0, 0.1, -0.1], [0.3] * spec.n_resources)
        res = simulate_batch(spec, b3, start, prm, np.arange(20), record=True, record_every=10)
        X, Y = res.record["positions"], res.record["resources"]
        assert np.all(np.diff(Y, axis=0) <= 1e-15)
        for t in range(X.shape[0]):
            for p in range(X.shape[1]):
                exc = boundary_excess(spec, b3, JointState(X[t, p], Y[t, p]))
                assert np.max(exc) <= 1e-9


def test_fuel_runs_out_on_long_horizons(b2):
    spec = GameSpec.pooling(2, 1.0)
    prm = SchemeParams(dt=1e-3, seed=2, horizon=20.0)
    res = simulate_batch(spec, b2, JointState([0.0, 0.0], [0.05]), prm, np.arange(10))
    assert np.all(res.final_resources == 0.0)


def test_round_trip_needs_fuel(b2):
    spec = GameSpec.pooling(2, 1.0)
    prm = SchemeParams(horizon=0.01)
    with pytest.raises(AdmissibilityError):
        simulate_batch(spec, b2, JointState([0.0, 0.0], [0.1]), prm, [0],
                       waste=WasteRoundTrip(0, 0.1))


def test_batch_is_shard_independent(b3):
    spec = GameSpec.sharing(SHARE3, 2.0)
    prm = SchemeParams(dt=1e-3, seed=5, horizon=1.0)
    st = JointState([0.1, 0.0, -0.1], [0.4, 0.4, 0.4])
    b = quad_boundary(3, 2.0)
    whole = simulate_batch(spec, b, st, prm, np.arange(6))
    parts = [simulate_batch(spec, b, st, prm, np.arange(k, k + 2)) for k in (0, 2, 4)]
    np.testing.assert_allclose(whole.cost, np.concatenate([r.cost for r in parts]), rtol=0, atol=1e-12)


# ---------------------------------------------------------------- explicit map

def test_explicit_zero_noise_interior(b2):
    out = two_player_explicit(JointState([0.1, 0.0], [1.0]), np.zeros((20, 2)), b2)
    assert np.all(out["xi_plus"] == 0) and np.all(out["xi_minus"] == 0)


def test_explicit_initial_jump(b2):
    st = JointState([1.5, 0.0], [0.8])
    out = two_player_explicit(st, np.zeros((3, 2)), b2)
    z, u = b2.jump_root(1.5, 0.8)
    assert abs(out["xi_plus"][0] - (0.8 - u)) < 1e-12
    assert abs(out["positions"][0, 0] - out["positions"][0, 1] - z) < 1e-12


def test_explicit_sides_never_move_together(b2):
    noise = PathNoise(3, np.arange(1000), 2, 1e-3).draw(2000)
    out = two_player_explicit(JointState([0.0, 0.0], [0.6]), noise, b2)
    up = np.diff(out["xi_plus"], axis=0) > 0
    down = np.diff(out["xi_minus"], axis=0) > 0
    assert not np.any(up & down)
    assert np.any(up) and np.any(down)
