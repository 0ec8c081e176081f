"""Game specification, joint state and region classification.

Players are indexed from 0 in code.  Region labels render 1-based
("A2+" means the second player acts on the positive side), which is
how the CLI reports them.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, SpecError, ModelError

POOLING = "pooling"
DIVIDING = "dividing"
SHARING = "sharing"
GENERAL = "general"
VARIANTS = (POOLING, DIVIDING, SHARING, GENERAL)


@dataclass(frozen=True)
class CostFunction:
    """Running cost h with analytic derivatives d1, d2, d3.

    All callables must accept numpy arrays.
    """

    h: Callable
    d1: Callable
    d2: Callable
    d3: Callable
    curvature_bounds: tuple
    name: str = "custom"

    def validate(self, sigma_ref=1.0, n_grid=10_000, atol=1e-10):
        """Sample the standing assumptions on [-10 sigma_ref, 10 sigma_ref]."""
        k, K = self.curvature_bounds
        if not (0 < k <= K):
            raise ModelError(f"curvature bounds must satisfy 0 < k <= K, got {(k, K)}")
        x = np.linspace(-10 * sigma_ref, 10 * sigma_ref, n_grid)
        hx, hmx = self.h(x), self.h(-x)
        if np.max(np.abs(hx - hmx)) > atol * (1 + np.max(np.abs(hx))):
            raise ModelError("cost is not symmetric")
        if float(self.h(np.array([0.0]))[0]) < 0:
            raise ModelError("cost must satisfy h(0) >= 0")
        h2 = self.d2(x)
        if np.any(h2 < k - atol) or np.any(h2 > K + atol):
            raise ModelError("second derivative leaves the curvature bounds")
        xp = x[x >= 0]
        if np.any(self.d3(xp) > atol):
            raise ModelError("second derivative must be non-increasing on x >= 0")
        return True

    @classmethod
    def quadratic(cls):
        return cls(
            h=lambda x: np.square(x),
            d1=lambda x: 2.0 * np.asarray(x, dtype=float),
            d2=lambda x: np.full(np.shape(x), 2.0),
            d3=lambda x: np.zeros(np.shape(x)),
            curvature_bounds=(2.0, 2.0),
            name="quadratic",
        )

    @classmethod
    def quadratic_logcosh(cls, eps=0.1):
        """h(x) = x^2 + eps * log cosh x, a non-quadratic cost with h''' <= 0 on x >= 0."""
        if eps < 0:
            raise SpecError("eps must be non-negative")

        def h(x):
            x = np.asarray(x, dtype=float)
            return x * x + eps * (np.logaddexp(x, -x) - np.log(2.0))

        def d1(x):
            return 2.0 * np.asarray(x, dtype=float) + eps * np.tanh(x)

        def sech2(x):
            e = np.exp(-2.0 * np.abs(x))
            return 4.0 * e / (1.0 + e) ** 2

        def d2(x):
            return 2.0 + eps * sech2(x)

        def d3(x):
            return -2.0 * eps * np.tanh(x) * sech2(x)

        return cls(h, d1, d2, d3, (2.0, 2.0 + eps), name=f"quadratic_logcosh({eps!r})")

    @classmethod
    def zero(cls):
        """h = 0.  Not a valid game cost (k = 0), but handy as a degenerate check."""
        z = lambda x: np.zeros(np.shape(x))
        return cls(z, z, z, z, (0.0, 0.0), name="zero")


def infer_variant(adjacency):
    A = np.asarray(adjacency)
    N, M = A.shape
    if M == 1 and np.all(A == 1):
        return POOLING
    if M == N and np.array_equal(A, np.eye(N, dtype=A.dtype)):
        return DIVIDING
    if M == N and np.all(np.diag(A) == 1):
        return SHARING
    return GENERAL


@dataclass(frozen=True)
class GameSpec:
    n_players: int
    n_resources: int
    adjacency: np.ndarray
    discount: float
    cost: CostFunction
    variant: str = field(default="")

    def __post_init__(self):
        A = np.array(self.adjacency, dtype=float)
        if A.ndim != 2 or A.shape != (self.n_players, self.n_resources):
            raise SpecError(
                f"adjacency must have shape ({self.n_players}, {self.n_resources}), got {A.shape}"
            )
        if self.n_players < 2:
            raise DimensionError("a game needs at least two players")
        if not np.all((A == 0) | (A == 1)):
            raise SpecError("adjacency entries must be 0 or 1")
        if np.any(A.sum(axis=1) < 1):
            raise SpecError("each player must have access to at least one resource")
        if np.any(A.sum(axis=0) < 1):
            raise SpecError("each resource must be accessible to at least one player")
        if not (self.discount > 0 and np.isfinite(self.discount)):
            raise SpecError(f"discount must be positive, got {self.discount}")
        A.setflags(write=False)
        object.__setattr__(self, "adjacency", A)
        inferred = infer_variant(A)
        v = self.variant or inferred
        if v not in VARIANTS:
            raise SpecError(f"unknown variant {v!r}")
        if v in (POOLING, DIVIDING, SHARING) and v != inferred:
            if not (v == SHARING and inferred == DIVIDING):
                raise SpecError(f"adjacency does not describe a {v} game")
        object.__setattr__(self, "variant", v)

    @classmethod
    def pooling(cls, n_players, discount, cost=None):
        return cls(n_players, 1, np.ones((n_players, 1)), discount,
                   cost or CostFunction.quadratic(), POOLING)

    @classmethod
    def dividing(cls, n_players, discount, cost=None):
        return cls(n_players, n_players, np.eye(n_players), discount,
                   cost or CostFunction.quadratic(), DIVIDING)

    @classmethod
    def sharing(cls, adjacency, discount, cost=None):
        A = np.asarray(adjacency, dtype=float)
        return cls(A.shape[0], A.shape[1], A, discount, cost or CostFunction.quadratic(), SHARING)

    @property
    def a(self):
        """Scale (N-1)/N of the centered argument of the cost."""
        return (self.n_players - 1) / self.n_players

    @property
    def beta(self):
        return 2.0 * (self.n_players - 1) * self.discount / self.n_players


@dataclass(frozen=True)
class JointState:
    positions: np.ndarray
    resources: np.ndarray

    def __post_init__(self):
        x = np.array(self.positions, dtype=float).ravel()
        y = np.array(self.resources, dtype=float).ravel()
        if np.any(y < 0):
            raise SpecError("resource levels must be non-negative")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise SpecError("state must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "resources", y)

    @property
    def relative(self):
        return relative_positions(self.positions)


@dataclass(frozen=True)
class RegionLabel:
    kind: str  # "waiting" or "action"
    player: Optional[int] = None
    side: int = 0

    @classmethod
    def waiting(cls):
        return cls("waiting")

    @classmethod
    def action(cls, player, side):
        return cls("action", int(player), 1 if side >= 0 else -1)

    @property
    def is_waiting(self):
        return self.kind == "waiting"

    def __str__(self):
        if self.is_waiting:
            return "W"
        return f"A{self.player + 1}{'+' if self.side > 0 else '-'}"


def relative_positions(x):
    x = np.asarray(x, dtype=float)
    N = x.shape[-1]
    if N < 2:
        raise DimensionError("relative positions need at least two players")
    total = x.sum(axis=-1, keepdims=True)
    return x - (total - x) / (N - 1)


def total_accessible(spec, y, player=None):
    """Accessible fuel sum_j a_ij y^j; all players when player is None."""
    y = np.asarray(y, dtype=float)
    if player is None:
        return y @ spec.adjacency.T
    return float(spec.adjacency[player] @ y)


def allocation_weights(spec, y, player):
    y = np.asarray(y, dtype=float)
    num = spec.adjacency[player] * y
    tot = num.sum()
    if tot <= 0:
        return np.zeros_like(num)
    return num / tot


def allocation_matrix(spec, y):
    """Rows are the allocation weights of each player (zero rows when exhausted)."""
    y = np.asarray(y, dtype=float)
    num = spec.adjacency * y[None, :]
    tot = num.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(tot > 0, num / np.where(tot > 0, tot, 1.0), 0.0)
    return w


def boundary_excess(spec, boundary, state, shifts=None):
    """Per-player |x~^i| - threshold_i; -inf for players with no fuel left.

    ``shifts`` tightens player thresholds (threshold = f^{-1}(acc) - shift).
    """
    xt = state.relative
    acc = total_accessible(spec, state.resources)
    exc = np.full(spec.n_players, -np.inf)
    live = acc > 0
    if np.any(live):
        thr = boundary.f_inverse(acc[live])
        if shifts is not None:
            thr = thr - np.asarray(shifts, dtype=float)[live]
        exc[live] = np.abs(xt[live]) - thr
    return exc


def top_index(values):
    """Index of the maximum, ties resolved to the largest index."""
    values = np.asarray(values)
    return len(values) - 1 - int(np.argmax(values[::-1]))


def classify_region(spec, boundary, state, shifts=None):
    exc = boundary_excess(spec, boundary, state, shifts)
    i = top_index(exc)
    if exc[i] >= 0:
        return RegionLabel.action(i, np.sign(state.relative[i]) or 1)
    return RegionLabel.waiting()
