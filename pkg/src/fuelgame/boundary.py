"""Free boundary of the single-resource problem.

The boundary is stored through its inverse g = f^{-1}: resource level y
maps to the threshold x = g(y).  In that parametrisation the defining ODE
is regular at both ends (dx/dy -> 0 as y grows), so we integrate x(y)
from (0, x0) and keep the exact slopes for cubic Hermite interpolation.
Forward evaluation f(x) inverts the interpolant, which makes f and g
exact inverses of one another (jump roots rely on that).
"""

import math

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq
from scipy.special import roots_laguerre, roots_legendre

from .errors import CoverageError, ModelError, NumericError

QUAD_RTOL = 1e-9
QUAD_START = 64
QUAD_MAX = 256


class PEvaluator:
    """p(x) = E int_0^inf e^{-alpha t} h(a x + s B_t) dt and derivatives.

    a = (N-1)/N, s = sqrt((N-1)/N).  Integrating the Gaussian semigroup over
    time gives the resolvent kernel, so with lam = sqrt(2 alpha) / s

        p(x) = lam/(2 alpha) * int e^{-lam |w|} h(a x + w) dw.

    Each half-line uses Gauss-Laguerre nodes.  The half-line pointing back
    to the origin is split where the argument crosses 0 (Gauss-Legendre
    panel, then a shifted Laguerre tail) so features of h near 0 stay
    resolved for large |x|.  Node counts double from 64 until the change
    on a probe grid is below 1e-9 relative to the integrand size.
    """

    def __init__(self, cost, n_players, discount, probe=None):
        self.cost = cost
        self.n_players = n_players
        self.discount = float(discount)
        self.a = (n_players - 1) / n_players
        self.s = math.sqrt(self.a)
        self.lam = math.sqrt(2.0 * self.discount) / self.s
        self._derivs = (cost.h, cost.d1, cost.d2, cost.d3)
        if probe is None:
            g = math.sqrt(n_players / (2.0 * (n_players - 1) * self.discount))
            probe = g * np.array([0.0, 0.05, 0.3, 1.0, 2.0, 5.0, 20.0])
        self.n_nodes = self._converge(np.asarray(probe, dtype=float))

    def _nodes(self, n):
        v, wl = roots_laguerre(n)
        keep = wl > 0
        t, wg = roots_legendre(n)
        return v[keep] / self.lam, wl[keep], 0.5 * (t + 1.0), 0.5 * wg

    def _eval(self, x, order, nodes):
        v, wl, t, wg = nodes
        lam, fn = self.lam, self._derivs[order]
        ax = self.a * np.asarray(x, dtype=float)[..., None]
        c = np.abs(ax)
        toward = -np.where(ax >= 0, 1.0, -1.0)
        far = fn(ax - toward * v)
        near = fn(ax + toward * c * t)
        tail = fn(ax + toward * (c + v))
        w_near = lam * c * wg * np.exp(-lam * c * t)
        w_tail = np.exp(-lam * c) * wl
        scale = self.a ** order / (2.0 * self.discount)
        val = far @ wl + np.sum(near * w_near, axis=-1) + np.sum(tail * w_tail, axis=-1)
        mag = np.abs(far) @ wl + np.sum(np.abs(near) * w_near, axis=-1) + np.sum(np.abs(tail) * w_tail, axis=-1)
        return scale * val, scale * mag

    def _converge(self, probe):
        n = QUAD_START
        prev = None
        while n <= QUAD_MAX:
            nodes = self._nodes(n)
            cur = [self._eval(probe, k, nodes) for k in range(4)]
            if prev is not None:
                # relative to the size of the order-k integrand over the probe grid
                ok = all(
                    np.max(np.abs(c[0] - p[0])) <= QUAD_RTOL * max(np.max(c[1]), 1e-300)
                    for c, p in zip(cur, prev)
                )
                if ok:
                    # keep the coarser rule, it already meets the tolerance
                    self._nodes_used = prev_nodes
                    return n // 2
            prev, prev_nodes = cur, nodes
            n *= 2
        raise NumericError(
            f"quadrature for p did not stabilise to {QUAD_RTOL} relative change by {QUAD_MAX} nodes"
        )

    def __call__(self, x, order=0):
        if order not in (0, 1, 2, 3):
            raise ValueError("order must be 0, 1, 2 or 3")
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape)
        flat, res = x.ravel(), out.ravel()
        step = 512
        for i in range(0, flat.size, step):
            res[i:i + step] = self._eval(flat[i:i + step], order, self._nodes_used)[0]
        return out if out.ndim else float(out)

    def derivs(self, x):
        """(p, p', p'', p''') at x."""
        return tuple(self(x, k) for k in range(4))


def p_eval(cost, n_players, discount, x, order=0):
    return PEvaluator(cost, n_players, discount)(x, order)


def _gamma(n_players, discount):
    return math.sqrt(n_players / (2.0 * (n_players - 1) * discount))


def find_x0(p, n_players, discount):
    """Unique positive root of sqrt(beta) tanh(z sqrt(beta)) p'(z) = p''(z)."""
    g = _gamma(n_players, discount)

    def F(z):
        return math.tanh(z / g) * p(z, 1) / g - p(z, 2)

    lo, hi = 1e-8, 1e-8
    if F(lo) >= 0:
        raise ModelError("intercept equation has no sign change near 0")
    while F(hi) <= 0:
        lo = hi
        hi *= 2.0
        if hi > 1e3:
            raise ModelError("no intercept bracket found in [1e-8, 1e3]")
    return brentq(F, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def _slope(p, g, x):
    """dx/dy along the boundary, i.e. 1/f'(x)."""
    p1, p2, p3 = p(x, 1), p(x, 2), p(x, 3)
    den = p2 * g * math.tanh(x / g) - p1
    num = p1 - g * g * p3
    if not den < 0:
        raise NumericError(f"boundary ODE denominator is not negative at x={x!r}")
    if not num > 0:
        raise NumericError(f"boundary ODE numerator is not positive at x={x!r}")
    return den / num


def solve_f_table(p, x0, n_players, discount, y_max, rtol=1e-12, max_step=None):
    """Integrate the boundary x(y) from (0, x0) until y >= 1.05 y_max.

    Classical RK4 with step-doubling error control; returns arrays
    (y, x, dx/dy) with y increasing and x strictly decreasing.
    """
    if not y_max > 0:
        raise ValueError("y_max must be positive")
    g = _gamma(n_players, discount)
    y_end = 1.05 * y_max
    if max_step is None:
        max_step = 0.02 * min(1.0, x0)
    rhs = lambda x: _slope(p, g, x)

    def rk4(x, h, k1):
        k2 = rhs(x + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h * k2)
        k4 = rhs(x + h * k3)
        return x + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0

    ys, xs, ss = [0.0], [x0], [rhs(x0)]
    y, x, k1 = 0.0, x0, ss[0]
    h = max_step / 8
    while y < y_end:
        h = min(h, max_step)
        full = rk4(x, h, k1)
        half = rk4(x, 0.5 * h, k1)
        two = rk4(half, 0.5 * h, rhs(half))
        err = abs(two - full) / 15.0
        tol = rtol * max(abs(two), 1e-3)
        if err <= tol and two > 0:
            y += h
            x = two + (two - full) / 15.0
            k1 = rhs(x)
            ys.append(y)
            xs.append(x)
            ss.append(k1)
            fac = 2.0 if err == 0 else min(2.0, 0.9 * (tol / err) ** 0.2)
            h *= fac
        else:
            fac = 0.5 if err == 0 else max(0.1, 0.9 * (tol / err) ** 0.2)
            h *= fac
            if h < 1e-14:
                raise NumericError("boundary ODE step size underflow")
    xs = np.array(xs)
    if np.any(np.diff(xs) >= 0):
        raise NumericError("boundary table is not strictly decreasing")
    return np.array(ys), xs, np.array(ss)


class BoundarySolution:
    """Tabulated boundary with p evaluator and the cosh coefficient A(y)."""

    def __init__(self, cost, n_players, discount, y_max, p=None):
        self.n_players = n_players
        self.discount = float(discount)
        self.beta = 2.0 * (n_players - 1) * self.discount / n_players
        self.gamma = _gamma(n_players, discount)
        self.cost = cost
        self.p = p if p is not None else PEvaluator(cost, n_players, discount)
        self.x0 = find_x0(self.p, n_players, discount)
        self.ys, self.xs, self.slopes = solve_f_table(self.p, self.x0, n_players, discount, y_max)
        self.y_max = float(y_max)
        self.y_cover = float(self.ys[-1])
        self.x_min = float(self.xs[-1])
        self._g = CubicHermiteSpline(self.ys, self.xs, self.slopes, extrapolate=False)
        self._dg = self._g.derivative()
        self._check_monotone()

    def _check_monotone(self):
        t = np.linspace(0, 1, 7)[1:-1]
        yy = (self.ys[:-1, None] + t[None, :] * np.diff(self.ys)[:, None]).ravel()
        if np.any(self._dg(yy) >= 0):
            raise NumericError("boundary interpolant is not monotone; refine the table")

    @classmethod
    def build(cls, spec, y_max):
        return cls(spec.cost, spec.n_players, spec.discount, y_max)

    @property
    def table(self):
        """(x, f(x)) pairs, x increasing on [x_min, x0]."""
        return list(zip(self.xs[::-1].tolist(), self.ys[::-1].tolist()))

    def _check_cover(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise ValueError("resource level must be non-negative")
        if np.any(y > self.y_cover):
            raise CoverageError(
                f"resource level {float(np.max(y))!r} exceeds table coverage "
                f"{self.y_cover!r}; build the boundary with a larger y_max"
            )
        return y

    def f_inverse(self, y):
        y = self._check_cover(y)
        out = self._g(y)
        out = np.where(y == 0, self.x0, out)
        return out if np.ndim(out) else float(out)

    def threshold(self, y):
        """Unchecked f^{-1} for arrays already known to lie in [0, y_cover]."""
        return self._g(y)

    def threshold_slope(self, y):
        return self._dg(y)

    def f_inverse_prime(self, y):
        y = self._check_cover(y)
        out = self._dg(y)
        return out if np.ndim(out) else float(out)

    def f(self, x):
        """f(x) with the exhaustion extension f = 0 for |x| >= x0; f is even."""
        x = np.abs(np.asarray(x, dtype=float))
        if np.any(x < self.x_min):
            raise CoverageError(f"x below table range {self.x_min!r}; build with a larger y_max")
        out = np.zeros(x.shape)
        inside = x < self.x0
        if np.any(inside):
            out[inside] = [self._y_of_x(v) for v in x[inside]]
        return out if out.ndim else float(out)

    def f_prime(self, x):
        """f'(x) for x in (x_min, x0]; odd extension for negative x."""
        xa = np.abs(np.asarray(x, dtype=float))
        y = self.f(xa)
        d = 1.0 / np.asarray(self.f_inverse_prime(y))
        d = np.where(xa >= self.x0, np.where(xa > self.x0, 0.0, d), d)
        d = np.sign(np.asarray(x, dtype=float)) * d
        return d if d.ndim else float(d)

    def _y_of_x(self, x):
        if x >= self.x0:
            return 0.0
        j = int(np.searchsorted(-self.xs, -x))
        lo, hi = self.ys[j - 1], self.ys[j]
        if self.xs[j] == x:
            return float(hi)
        return brentq(lambda y: float(self._g(y)) - x, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)

    def a_coeff(self, y):
        """A(y): coefficient of cosh(x sqrt(beta)) in the waiting-region value."""
        x = np.asarray(self.f_inverse(y))
        g = self.gamma
        out = self.p(x, 1) * g * np.sinh(x / g) - self.p(x, 2) * g * g * np.cosh(x / g)
        return out if np.ndim(out) else float(out)

    def a_coeff_prime(self, y):
        x = np.asarray(self.f_inverse(y))
        g = self.gamma
        out = self.p(x, 2) * g * np.sinh(x / g) - self.p(x, 1) * np.cosh(x / g)
        return out if np.ndim(out) else float(out)

    def jump_root(self, x_rel, acc, shift=0.0):
        """Landing point and remaining fuel for a jump from |x_rel| > threshold.

        The acting player pushes toward the center until it meets the
        threshold g(acc') - shift with acc' = acc - jump.  Returns (z, acc')
        with z signed like x_rel; acc' = 0 means all fuel is used.
        """
        s = abs(x_rel) - acc + shift
        sign = 1.0 if x_rel >= 0 else -1.0
        if s >= self.x0:
            return sign * (abs(x_rel) - acc), 0.0
        u_hi = acc
        fhi = float(self.f_inverse(u_hi)) - u_hi - s
        if fhi > 0:
            # already inside (numerical noise); no movement
            return x_rel, acc
        if fhi == 0:
            return x_rel, acc
        u = brentq(lambda u: float(self._g(u)) - u - s if u > 0 else self.x0 - s,
                   0.0, u_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        z = float(self._g(u)) - shift if u > 0 else self.x0 - shift
        return sign * z, u


def jump_root_plus(boundary, target):
    """Positive z with z - f(z) = target (f extended by 0 beyond x0)."""
    if target >= boundary.x0:
        return float(target)
    if target <= -boundary.y_cover:
        raise CoverageError("jump target beyond table coverage")
    # z = g(u) with g(u) - u = target; g(u) - u is strictly decreasing in u
    hi = 1.0
    while float(boundary.f_inverse(min(hi, boundary.y_cover))) - min(hi, boundary.y_cover) > target:
        if hi >= boundary.y_cover:
            raise CoverageError("jump target beyond table coverage")
        hi *= 2.0
    hi = min(hi, boundary.y_cover)
    fn = lambda u: (boundary.x0 if u == 0 else float(boundary._g(u))) - u - target
    u = brentq(fn, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(boundary.f_inverse(u))


def jump_root_minus(boundary, target):
    """Negative z with z + f(z) = target."""
    return -jump_root_plus(boundary, -target)
