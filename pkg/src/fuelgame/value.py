"""Equilibrium values, QVI audit and the pooling/sharing/dividing comparison."""

from dataclasses import dataclass

import numpy as np

from .boundary import jump_root_minus, jump_root_plus  # noqa: F401  (public API)
from .core import (
    GameSpec,
    JointState,
    allocation_weights,
    boundary_excess,
    classify_region,
    total_accessible,
)
from .dynamics import jump_cascade
from .errors import DomainError, HypothesisError


@dataclass(frozen=True)
class ValueQuery:
    spec: GameSpec
    boundary: object
    state: JointState
    player: int


def waiting_value(spec, boundary, state, player):
    """p(x~^i) + A(acc_i) cosh(x~^i sqrt(beta)), valid on the closed waiting region."""
    xt = state.relative[player]
    acc = total_accessible(spec, state.resources, player)
    return float(boundary.p(xt, 0) + boundary.a_coeff(acc) * np.cosh(xt / boundary.gamma))


def game_values(spec, boundary, state):
    """Values of all players.  Exterior states are first moved by the jump
    cascade; each jump leaves every player's value unchanged."""
    landed, _ = jump_cascade(spec, boundary, state)
    return np.array([waiting_value(spec, boundary, landed, i) for i in range(spec.n_players)])


def value_game(query):
    landed, _ = jump_cascade(query.spec, query.boundary, query.state)
    return waiting_value(query.spec, query.boundary, landed, query.player)


# ---------------------------------------------------------------- QVI audit

@dataclass(frozen=True)
class QviReport:
    value: float
    pde_residual: float
    grad_plus: float
    grad_minus: float
    region: object
    cross_terms: dict
    active: tuple


def _shifted(state, dx=None, dy=None):
    x = np.array(state.positions)
    y = np.array(state.resources)
    if dx is not None:
        x[dx[0]] += dx[1]
    if dy is not None:
        y[dy[0]] += dy[1]
    return JointState(x, y)


def _val(query, state):
    return value_game(ValueQuery(query.spec, query.boundary, state, query.player))


def _d1_x(query, j, h):
    def D(h):
        return (_val(query, _shifted(query.state, dx=(j, h)))
                - _val(query, _shifted(query.state, dx=(j, -h)))) / (2 * h)
    return (4 * D(h / 2) - D(h)) / 3


def _d2_x(query, j, h, v0):
    def S(h):
        return (_val(query, _shifted(query.state, dx=(j, h))) - 2 * v0
                + _val(query, _shifted(query.state, dx=(j, -h)))) / (h * h)
    return (4 * S(h / 2) - S(h)) / 3


def _d1_y(query, k, h):
    yk = query.state.resources[k]
    if yk >= h:
        def D(h):
            return (_val(query, _shifted(query.state, dy=(k, h)))
                    - _val(query, _shifted(query.state, dy=(k, -h)))) / (2 * h)
        return (4 * D(h / 2) - D(h)) / 3
    # one-sided second-order stencil at the fuel floor
    h = min(h, 1e-5)
    v = [_val(query, _shifted(query.state, dy=(k, s * h))) for s in range(3)]
    return (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)


def gamma_operator(query, j, h):
    """Gamma_j v^i = sum_k (a_jk y^k / sum_s a_js y^s) dv^i/dy^k."""
    w = allocation_weights(query.spec, query.state.resources, j)
    return float(sum(w[k] * _d1_y(query, k, h * max(1.0, query.state.resources[k]))
                     for k in range(len(w)) if w[k] > 0))


def directional_residuals(query, j, fd_step=None):
    """(-Gamma_j v^i + v^i_{x^j}, -Gamma_j v^i - v^i_{x^j}) by finite differences."""
    xt = query.state.relative
    h = fd_step or 1e-4 * max(1.0, abs(xt[j]))
    g = gamma_operator(query, j, 1e-4)
    vx = _d1_x(query, j, h)
    return -g + vx, -g - vx


def qvi_residuals(query, fd_step=None, tol=1e-6, domain_tol=1e-9):
    spec, boundary, state, i = query.spec, query.boundary, query.state, query.player
    exc = boundary_excess(spec, boundary, state)
    others = [j for j in range(spec.n_players) if j != i]
    region = classify_region(spec, boundary, state)
    if not region.is_waiting and region.player != i and exc[region.player] > domain_tol:
        raise DomainError(f"player {region.player + 1} acts at this state; outside the audit domain")
    xt = state.relative
    h = fd_step or 1e-4 * max(1.0, abs(xt[i]))
    v0 = _val(query, state)
    # second differences amplify table interpolation noise by 1/h^2, so a wider step
    h2 = 20 * fd_step if fd_step else 2e-3 * max(1.0, abs(xt[i]))
    lap = sum(_d2_x(query, j, h2, v0) for j in range(spec.n_players))
    cost = float(spec.cost.h(np.array([spec.a * xt[i]]))[0])
    pde = -spec.discount * v0 + cost + 0.5 * lap
    gp, gm = directional_residuals(query, i, h)
    cross = {j: directional_residuals(query, j, h) for j in others}
    active = []
    if abs(pde) < tol:
        active.append("pde")
    if abs(gp) < tol:
        active.append("grad_plus")
    if abs(gm) < tol:
        active.append("grad_minus")
    return QviReport(v0, abs(pde), gp, gm, region, cross, tuple(active))


def one_sided_second_derivatives(query, j, h=1e-3):
    """Second derivative in x^j from the left and from the right (second-order
    one-sided stencils, one Richardson step)."""
    v0 = _val(query, query.state)

    def side(sign, h):
        v = [v0] + [_val(query, _shifted(query.state, dx=(j, sign * k * h))) for k in (1, 2, 3)]
        return (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / (h * h)

    left = (4 * side(-1, h / 2) - side(-1, h)) / 3
    right = (4 * side(1, h / 2) - side(1, h)) / 3
    return left, right


# ---------------------------------------------------------------- comparison

@dataclass(frozen=True)
class Comparison:
    pooling: np.ndarray
    sharing: np.ndarray
    dividing: np.ndarray
    ordered: bool


def compare_games(positions, resources, sharing_adjacency, discount, cost, boundary, tol=1e-12):
    """Values under pooling (y = sum y^j), the given sharing network and dividing."""
    y = np.asarray(resources, dtype=float)
    N = len(positions)
    games = [
        (GameSpec.pooling(N, discount, cost), JointState(positions, [y.sum()])),
        (GameSpec.sharing(sharing_adjacency, discount, cost), JointState(positions, y)),
        (GameSpec.dividing(N, discount, cost), JointState(positions, y)),
    ]
    vals = []
    for spec, state in games:
        if not classify_region(spec, boundary, state).is_waiting:
            raise HypothesisError(f"state is not in the waiting region of the {spec.variant} game")
        vals.append(np.array([waiting_value(spec, boundary, state, i) for i in range(N)]))
    ok = bool(np.all(vals[0] <= vals[1] + tol) and np.all(vals[1] <= vals[2] + tol))
    return Comparison(vals[0], vals[1], vals[2], ok)
