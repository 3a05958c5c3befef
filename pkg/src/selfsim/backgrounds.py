"""Analytic far-field parts of entire-graph data.

An entire graph with linear growth is stored as ``background + residual``:
the background is known in closed form (derivatives exact, never
FFT'd), the residual is periodic and decays toward the box boundary.

Two families:

* :class:`ExprBackground` -- any static smooth expression (planes, smoothed
  cones, slowly decaying perturbation tails), differentiated symbolically.
* :class:`EvolvedCone` -- a 1D two-slope cone already evolved by the
  linear semigroup, ``exp(-tau A) v0``. It solves the linear equation
  exactly, so it contributes no forcing, and at ``tau -> 0`` it is the
  exact (unsmoothed) cone.
"""

from functools import lru_cache

import numpy as np
import sympy as sp
from scipy import special

from .errors import ConfigError, NumericalFailure
from .kernels import biharmonic_profile

SYMBOLS = sp.symbols("x y", real=True)


@lru_cache(maxsize=512)
def _lambdified(expr_srepr, dim, gamma):
    expr = eval_srepr(expr_srepr)
    xs = SYMBOLS[:dim]
    for axis, order in enumerate(gamma):
        if order:
            expr = sp.diff(expr, xs[axis], order)
    return sp.lambdify(xs, expr, modules="numpy", cse=True)


def eval_srepr(text):
    return sp.sympify(eval(text, sp.__dict__.copy()))


class Background:
    """Interface shared by all backgrounds."""

    time_dependent = False

    def derivative(self, grid, gamma):
        raise NotImplementedError

    def values(self, grid):
        return self.derivative(grid, (0,) * grid.dim)

    def operator(self, grid, order):
        """A applied analytically: -Laplacian (order 2) or bilaplacian (order 4)."""
        d = grid.dim
        if order == 2:
            return -sum(self.derivative(grid, _axis_order(d, i, 2)) for i in range(d))
        if order == 4:
            total = 0.0
            for i in range(d):
                for j in range(d):
                    g = [0] * d
                    g[i] += 2
                    g[j] += 2
                    total = total + self.derivative(grid, tuple(g))
            return total
        raise ConfigError("invalid-operator-order", str(order))

    def time_derivative(self, grid, order):
        return np.zeros(grid.shape)

    def advanced(self, dt):
        return self

    def rescaled(self, lam, alpha):
        raise NotImplementedError

    def max_slope(self, grid):
        grads = [self.derivative(grid, _axis_order(grid.dim, i, 1)) for i in range(grid.dim)]
        return float(np.max(np.sqrt(sum(np.asarray(g) ** 2 for g in grads))))

    def to_dict(self):
        raise NotImplementedError

    def __add__(self, other):
        return SumBackground([self, other])


def _axis_order(dim, axis, order):
    g = [0] * dim
    g[axis] = order
    return tuple(g)


class ExprBackground(Background):
    """Static background given by a sympy expression in ``x`` (and ``y``)."""

    def __init__(self, expr, dim, label=""):
        if isinstance(expr, str):
            expr = eval_srepr(expr) if expr.startswith(("Add(", "Mul(", "Pow(")) else sp.sympify(
                expr, locals=dict(zip("xy", SYMBOLS))
            )
        self.expr = sp.sympify(expr)
        self.dim = int(dim)
        self.label = label
        self._key = sp.srepr(self.expr)

    def derivative(self, grid, gamma):
        if len(gamma) != grid.dim or grid.dim != self.dim:
            raise ConfigError("dimension-mismatch")
        f = _lambdified(self._key, self.dim, tuple(gamma))
        out = f(*grid.coords)
        return np.broadcast_to(np.asarray(out, dtype=float), grid.shape).copy()

    def rescaled(self, lam, alpha):
        xs = SYMBOLS[: self.dim]
        scaled = self.expr.subs({x: lam * x for x in xs}, simultaneous=True) / lam
        return ExprBackground(scaled, self.dim, self.label)

    def to_dict(self):
        return {"type": "expr", "dim": self.dim, "label": self.label, "srepr": self._key}

    def __eq__(self, other):
        return isinstance(other, ExprBackground) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        return f"ExprBackground({self.expr}, label={self.label!r})"


def _erf_cone(x, tau, order):
    """d^order/dx^order of exp(tau Laplacian)|x| (1D, closed form)."""
    s = np.sqrt(tau)
    gauss = np.exp(-(x**2) / (4 * tau)) / np.sqrt(4 * np.pi * tau)
    if order == 0:
        return x * special.erf(x / (2 * s)) + 4 * tau * gauss
    if order == 1:
        return special.erf(x / (2 * s))
    if order == 2:
        return 2 * gauss
    if order == 3:
        return 2 * (-x / (2 * tau)) * gauss
    if order == 4:
        return 2 * (x**2 / (4 * tau**2) - 1 / (2 * tau)) * gauss
    if order == 5:
        return 2 * (-(x**3) / (8 * tau**3) + 3 * x / (4 * tau**2)) * gauss
    raise ConfigError("order-too-high", f"cone derivative {order}")


def _bilaplace_cone(x, tau, order):
    """d^order/dx^order of exp(-tau d_x^4)|x| via the tabulated profile."""
    q = tau**0.25
    xi = x / q
    if order == 0:
        return q * biharmonic_profile(xi, "G")
    if order == 1:
        return biharmonic_profile(xi, "S")
    if 2 <= order <= 5:
        return 2 * q ** (1 - order) * biharmonic_profile(xi, order - 2)
    raise ConfigError("order-too-high", f"cone derivative {order}")


class EvolvedCone(Background):
    """1D cone m+ (x-a)_+ + m- (x-a)_- after linear evolution for time ``tau``.

    With c = (m+ + m-)/2 and d = (m+ - m-)/2 the cone is c|x-a| + d(x-a);
    the linear part is harmonic, the |.| part is smoothed by the heat or
    biharmonic semigroup according to ``operator_order``.
    """

    time_dependent = True

    def __init__(self, m_plus, m_minus, center=0.0, tau=0.0, operator_order=2):
        self.m_plus, self.m_minus = float(m_plus), float(m_minus)
        self.center, self.tau = float(center), float(tau)
        if operator_order not in (2, 4):
            raise ConfigError("invalid-operator-order", str(operator_order))
        self.operator_order = operator_order

    @property
    def dim(self):
        return 1

    def derivative(self, grid, gamma):
        if grid.dim != 1:
            raise ConfigError("dimension-mismatch", "EvolvedCone is one-dimensional")
        order = gamma[0]
        x = grid.coords[0] - self.center
        c = 0.5 * (self.m_plus + self.m_minus)
        d = 0.5 * (self.m_plus - self.m_minus)
        linear = {0: d * x, 1: d * np.ones_like(x)}.get(order, 0.0)
        if self.tau <= 0:
            if order == 0:
                return c * np.abs(x) + d * x
            if order == 1:
                return np.where(x >= 0, self.m_plus, -self.m_minus) * 1.0
            raise NumericalFailure("background-not-differentiable", "cone corner at tau = 0")
        smooth = _erf_cone if self.operator_order == 2 else _bilaplace_cone
        return c * smooth(x, self.tau, order) + linear

    def time_derivative(self, grid, order):
        # the evolved cone solves u_t = -A u
        return -self.operator(grid, self.operator_order)

    def advanced(self, dt):
        return EvolvedCone(self.m_plus, self.m_minus, self.center, self.tau + dt, self.operator_order)

    def rescaled(self, lam, alpha):
        return EvolvedCone(
            self.m_plus, self.m_minus, self.center / lam, self.tau / lam**alpha, self.operator_order
        )

    def max_slope(self, grid):
        return max(abs(self.m_plus), abs(self.m_minus))

    def to_dict(self):
        return {
            "type": "evolved-cone",
            "m_plus": self.m_plus,
            "m_minus": self.m_minus,
            "center": self.center,
            "tau": self.tau,
            "operator_order": self.operator_order,
        }

    def __repr__(self):
        return (
            f"EvolvedCone(m+={self.m_plus}, m-={self.m_minus}, a={self.center}, "
            f"tau={self.tau:.4g}, order={self.operator_order})"
        )


class SumBackground(Background):
    def __init__(self, parts):
        flat = []
        for p in parts:
            flat.extend(p.parts if isinstance(p, SumBackground) else [p])
        self.parts = flat

    @property
    def time_dependent(self):
        return any(p.time_dependent for p in self.parts)

    def derivative(self, grid, gamma):
        return sum(p.derivative(grid, gamma) for p in self.parts)

    def time_derivative(self, grid, order):
        return sum(p.time_derivative(grid, order) for p in self.parts)

    def advanced(self, dt):
        return SumBackground([p.advanced(dt) for p in self.parts])

    def rescaled(self, lam, alpha):
        return SumBackground([p.rescaled(lam, alpha) for p in self.parts])

    def to_dict(self):
        return {"type": "sum", "parts": [p.to_dict() for p in self.parts]}

    def __repr__(self):
        return " + ".join(repr(p) for p in self.parts)


def background_from_dict(data):
    if data is None:
        return None
    kind = data["type"]
    if kind == "expr":
        return ExprBackground(eval_srepr(data["srepr"]), data["dim"], data.get("label", ""))
    if kind == "evolved-cone":
        return EvolvedCone(
            data["m_plus"], data["m_minus"], data["center"], data["tau"], data["operator_order"]
        )
    if kind == "sum":
        return SumBackground([background_from_dict(p) for p in data["parts"]])
    raise ConfigError("unknown-background", kind)


def affine(slope, offset=0.0):
    """Plane a.x + c."""
    slope = np.atleast_1d(np.asarray(slope, dtype=float))
    xs = SYMBOLS[: slope.size]
    expr = sum(sp.Float(a) * x for a, x in zip(slope, xs)) + sp.Float(offset)
    return ExprBackground(expr, slope.size, "plane")
