"""Self-similar data, perturbations, parabolic rescaling and profiles."""

from dataclasses import dataclass, field as dc_field, replace

import numpy as np
import sympy as sp

from .backgrounds import SYMBOLS, EvolvedCone, ExprBackground, SumBackground
from .errors import ConfigError, NumericalFailure, PropertyFailure, RegimeViolation
from .fields import (
    RING_TOLERANCE,
    Field,
    derivative_values,
    interpolate_tensor,
    jet,
    ring_ratio,
)
from .flows import operator_from_jet, rhs_from_jet

DEFAULT_EPSILON = 0.2
# relative round-off allowance when comparing a slope with epsilon
REGIME_SLACK = 1e-9


@dataclass(frozen=True)
class ConeData:
    """One-homogeneous data |x| psi(x/|x|).

    1D ``two-slope``: slope ``m_plus`` for x > 0 and ``-m_minus`` for x < 0.
    2D ``angular-profile``: psi(theta) = m0 + sum_j a_j cos(j theta) + b_j sin(j theta).

    ``smoothing`` selects how the corner is handled: ``"sqrt"`` replaces |x|
    by sqrt(|x|^2 + delta^2) (delta defaults to two grid cells), ``"semigroup"``
    keeps the exact cone and lets the linear semigroup smooth it (1D only).
    """

    dim: int = 1
    kind: str = "two-slope"
    m_plus: float = 0.0
    m_minus: float = 0.0
    m0: float = 0.0
    harmonics: tuple = ()
    smoothing: str = "semigroup"
    smoothing_delta: float = None

    def __post_init__(self):
        if self.dim == 1 and self.kind != "two-slope":
            raise ConfigError("invalid-cone", "1D cones are two-slope")
        if self.dim == 2 and self.kind != "angular-profile":
            raise ConfigError("invalid-cone", "2D cones use an angular profile")
        if self.smoothing not in ("sqrt", "semigroup"):
            raise ConfigError("invalid-cone", f"smoothing={self.smoothing}")
        if self.smoothing == "semigroup" and self.dim != 1:
            raise ConfigError("invalid-cone", "semigroup smoothing is one-dimensional")
        object.__setattr__(self, "harmonics", tuple(tuple(map(float, h)) for h in self.harmonics))

    @classmethod
    def even(cls, m, **kw):
        return cls(dim=1, m_plus=m, m_minus=m, **kw)

    @classmethod
    def radial(cls, m, **kw):
        return cls(dim=2, kind="angular-profile", m0=m, smoothing="sqrt", **kw)

    @property
    def is_even(self):
        if self.dim == 1:
            return self.m_plus == self.m_minus
        return all(b == 0 and j % 2 == 0 for j, a, b in self.harmonics_indexed())

    def harmonics_indexed(self):
        return [(j + 1, a, b) for j, (a, b) in enumerate(self.harmonics)]

    def delta(self, grid):
        return 2 * grid.spacing if self.smoothing_delta is None else float(self.smoothing_delta)

    def exact(self, points):
        """Unsmoothed cone at an array of points, shape (dim, ...)."""
        pts = np.asarray(points, dtype=float)
        if self.dim == 1:
            x = pts.reshape(pts.shape[1:]) if pts.ndim > 1 and pts.shape[0] == 1 else pts
            return np.where(x >= 0, self.m_plus * x, -self.m_minus * x)
        r = np.hypot(pts[0], pts[1])
        th = np.arctan2(pts[1], pts[0])
        psi = self.m0 + sum(a * np.cos(j * th) + b * np.sin(j * th) for j, a, b in self.harmonics_indexed())
        return r * psi

    def background(self, grid, center=None):
        """Analytic background for this cone, optionally translated to ``center``."""
        if grid.dim != self.dim:
            raise ConfigError("dimension-mismatch", f"cone dim {self.dim} vs grid dim {grid.dim}")
        center = np.zeros(self.dim) if center is None else np.atleast_1d(np.asarray(center, float))
        if self.smoothing == "semigroup":
            return EvolvedCone(self.m_plus, self.m_minus, center[0], 0.0, 2)
        delta = sp.Float(self.delta(grid))
        xs = [s - sp.Float(c) for s, c in zip(SYMBOLS[: self.dim], center)]
        if self.dim == 1:
            c = sp.Float(0.5 * (self.m_plus + self.m_minus))
            d = sp.Float(0.5 * (self.m_plus - self.m_minus))
            expr = c * sp.sqrt(xs[0] ** 2 + delta**2) + d * xs[0]
        else:
            rho = sp.sqrt(xs[0] ** 2 + xs[1] ** 2 + delta**2)
            z = xs[0] + sp.I * xs[1]
            expr = sp.Float(self.m0) * rho
            for j, a, b in self.harmonics_indexed():
                zj = sp.expand(z**j)
                expr += (sp.Float(a) * sp.re(zj) + sp.Float(b) * sp.im(zj)) / rho ** (j - 1)
        return ExprBackground(expr, self.dim, "cone")

    def for_flow(self, background, flow):
        """Evolved cones carry the operator of the flow they are evolved by."""
        if isinstance(background, EvolvedCone):
            return replace_order(background, flow.operator_order)
        if isinstance(background, SumBackground):
            return SumBackground([self.for_flow(p, flow) for p in background.parts])
        return background

    def to_dict(self):
        return {
            "dim": self.dim,
            "kind": self.kind,
            "m_plus": self.m_plus,
            "m_minus": self.m_minus,
            "m0": self.m0,
            "harmonics": [list(h) for h in self.harmonics],
            "smoothing": self.smoothing,
            "smoothing_delta": self.smoothing_delta,
        }


def replace_order(cone, order):
    return EvolvedCone(cone.m_plus, cone.m_minus, cone.center, cone.tau, order)


def cone_from_dict(data):
    data = dict(data)
    data["harmonics"] = tuple(tuple(h) for h in data.get("harmonics", ()))
    return ConeData(**data)


def _slope(field):
    grads = [derivative_values(field, g) for g in _units(field.grid.dim)]
    return float(np.max(np.sqrt(sum(g**2 for g in grads))))


def _units(d):
    return [tuple(int(i == a) for i in range(d)) for a in range(d)]


def make_self_similar_data(cone, grid, epsilon=DEFAULT_EPSILON, flow=None):
    """The cone as a background-carrying Field with zero residual."""
    bg = cone.background(grid)
    if flow is not None:
        bg = cone.for_flow(bg, flow)
    v0 = Field(grid, np.zeros(grid.shape), bg)
    slope = _slope(v0)
    if slope > epsilon * (1 + REGIME_SLACK):
        raise RegimeViolation("slope-too-large", f"|grad v0| = {slope:.4g} > eps = {epsilon}")
    return v0


def rescale(u, lam, tolerance=RING_TOLERANCE):
    """u_lam(x) = u(lam x) / lam: residual by trigonometric interpolation, background exactly."""
    if lam < 1:
        raise ConfigError("invalid-lambda", f"lambda={lam} < 1")
    grid = u.grid
    if lam == 1:
        return u
    pts = lam * grid.axis
    outside = np.abs(pts) >= grid.half_width
    if np.any(outside) and ring_ratio(grid, u.values) > tolerance:
        raise NumericalFailure("out-of-domain", f"residual has not decayed for lambda={lam}")
    inside_pts = np.where(outside, 0.0, pts)
    vals = interpolate_tensor(grid, u.values, [inside_pts] * grid.dim) / lam
    mask = np.zeros(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        shape = [1] * grid.dim
        shape[ax] = grid.points_per_axis
        mask = mask | outside.reshape(shape)
    vals = np.where(mask, 0.0, vals)
    alpha = _alpha_of(u.background)
    bg = None if u.background is None else u.background.rescaled(lam, alpha)
    return Field(grid, vals, bg)


def _alpha_of(background):
    if isinstance(background, EvolvedCone):
        return background.operator_order
    if isinstance(background, SumBackground):
        orders = {_alpha_of(p) for p in background.parts} - {None}
        return orders.pop() if orders else None
    return None


@dataclass(frozen=True)
class Perturbation:
    """Perturbation p of self-similar data: ``shift``, ``bump`` or ``decay-tail``."""

    kind: str
    shift: tuple = ()
    center: tuple = ()
    width: float = 1.0
    amplitude: float = 0.0
    beta: float = 2.0

    def __post_init__(self):
        if self.kind not in ("none", "shift", "bump", "decay-tail"):
            raise ConfigError("unknown-perturbation", self.kind)
        if self.kind == "decay-tail" and not self.beta > 1:
            raise RegimeViolation("regime-violation", "decay-tail needs beta > 1 for bounded p")
        if self.kind == "bump" and not self.width > 0:
            raise ConfigError("invalid-perturbation", "bump width must be positive")

    def to_dict(self):
        return {
            "kind": self.kind,
            "shift": list(self.shift),
            "center": list(self.center),
            "width": self.width,
            "amplitude": self.amplitude,
            "beta": self.beta,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ("shift", "center"):
            data[key] = tuple(data.get(key, ()))
        return cls(**data)

    def tail_expression(self, dim):
        """Closed-form decay tail; its gradient is A (1+|x|^beta)^-1 times a unit direction."""
        A = sp.Float(self.amplitude)
        if dim == 1:
            beta = self.beta
            if beta != int(beta) or int(beta) % 2:
                raise ConfigError("unsupported-beta", "1D decay tails use even integer beta")
            s, x = sp.Symbol("s", real=True), SYMBOLS[0]
            return A * sp.integrate(1 / (1 + s ** int(beta)), (s, 0, x))
        if self.beta != 2:
            raise ConfigError("unsupported-beta", "2D decay tails use beta = 2")
        x, y = SYMBOLS[:2]
        return -A / sp.sqrt(1 + x**2 + y**2)

    def seminorm_exact(self, dim):
        """[p]_beta in closed form (supremum, attained in 1D, approached at infinity in 2D)."""
        if self.kind != "decay-tail":
            return None
        return abs(self.amplitude)

    def apply(self, v0, cone):
        """u0 = v0 + p as a Field."""
        grid = v0.grid
        if self.kind == "none":
            return v0
        if self.kind == "shift":
            bg = cone.background(grid, center=self._vector(self.shift, grid.dim))
            if isinstance(v0.background, EvolvedCone):
                bg = replace_order(bg, v0.background.operator_order)
            return Field(grid, v0.values, bg)
        if self.kind == "bump":
            return Field(grid, v0.values + self.bump_values(grid), v0.background)
        tail = ExprBackground(self.tail_expression(grid.dim), grid.dim, "tail")
        return Field(grid, v0.values, SumBackground([v0.background, tail]))

    def bump_values(self, grid):
        c = self._vector(self.center, grid.dim)
        r2 = sum((x - ci) ** 2 for x, ci in zip(grid.coords, c))
        return self.amplitude * np.exp(-r2 / self.width**2)

    @staticmethod
    def _vector(vals, dim):
        v = np.zeros(dim)
        vals = np.atleast_1d(np.asarray(vals, dtype=float))
        v[: vals.size] = vals
        return v


def make_perturbation(kind, params, grid, cone=None, epsilon=DEFAULT_EPSILON):
    """Perturbation field p and its metadata ([p]_beta, sup |p|, sup |grad p|)."""
    pert = Perturbation(kind=kind, **params)
    if kind == "shift":
        if cone is None:
            raise ConfigError("missing-cone", "a shift perturbs a cone")
        base = make_self_similar_data(cone, grid, epsilon=np.inf)
        moved = pert.apply(base, cone)
        if isinstance(base.background, ExprBackground):
            # the difference of cones tends to -/+ m a at the two ends: keep it
            # analytic so derivatives of p never see the periodic seam
            diff = ExprBackground(moved.background.expr - base.background.expr, grid.dim, "shift")
            p = Field(grid, np.zeros(grid.shape), diff)
        else:
            p = Field(grid, moved.full() - base.full())
        grad = _difference_gradient(moved, base)
    elif kind == "bump":
        p = Field(grid, pert.bump_values(grid))
        grad = np.sqrt(sum(derivative_values(p, g) ** 2 for g in _units(grid.dim)))
    elif kind == "decay-tail":
        tail = ExprBackground(pert.tail_expression(grid.dim), grid.dim, "tail")
        p = Field(grid, np.zeros(grid.shape), tail)
        grad = np.sqrt(sum(tail.derivative(grid, g) ** 2 for g in _units(grid.dim)))
    else:
        raise ConfigError("unknown-perturbation", kind)
    grad_sup = float(np.max(grad))
    if grad_sup >= epsilon:
        raise RegimeViolation("regime-violation", f"|grad p| = {grad_sup:.4g} >= eps = {epsilon}")
    meta = {
        "kind": kind,
        "sup_p": float(np.max(np.abs(p.full()))),
        "sup_grad_p": grad_sup,
        "seminorm_beta": pert.seminorm_exact(grid.dim),
        "beta": pert.beta if kind == "decay-tail" else None,
    }
    if kind == "bump":
        meta["sup_grad_p_exact"] = abs(pert.amplitude) * np.sqrt(2 / np.e) / pert.width
    if kind == "shift":
        slopes = max(abs(cone.m_plus), abs(cone.m_minus)) if cone.dim == 1 else None
        meta["shift_bound"] = None if slopes is None else slopes * float(np.linalg.norm(pert.shift))
    return p, meta


def _difference_gradient(a, b):
    units = _units(a.grid.dim)
    return np.sqrt(sum((derivative_values(a, g) - derivative_values(b, g)) ** 2 for g in units))


@dataclass(frozen=True)
class Profile:
    flow: object
    field: Field
    source: str = "evolved"
    metadata: dict = dc_field(default_factory=dict)


def reporting_mask(grid, radius=None):
    radius = grid.half_width / 4 if radius is None else radius
    return grid.ball_mask(radius)


def similarity_view(state, t, alpha):
    """t^(-1/alpha) v(t^(1/alpha) y, t) for a state at time t >= 1."""
    return rescale(state, t ** (1.0 / alpha))


def extract_profile(flow, cone, grid, t_profile=1.0, tolerance=5e-4, radius=None, **integrate_kw):
    """Psi(y) = v(y, 1) obtained by evolving the cone, with a two-time self-similarity check."""
    from .semigroup import integrate

    if t_profile < 1:
        raise ConfigError("invalid-profile-time", "t_profile >= 1 keeps rescaling inside the box")
    v0 = make_self_similar_data(cone, grid, flow=flow, epsilon=integrate_kw.pop("epsilon", DEFAULT_EPSILON))
    traj = integrate(v0, flow, 2 * t_profile, snapshots=[t_profile, 2 * t_profile], **integrate_kw)
    psi1 = similarity_view(traj.state_at(t_profile), t_profile, flow.alpha)
    psi2 = similarity_view(traj.state_at(2 * t_profile), 2 * t_profile, flow.alpha)
    mask = reporting_mask(grid, radius)
    a, b = psi1.full()[mask], psi2.full()[mask]
    scale = float(np.max(np.abs(a)))
    mismatch = float(np.max(np.abs(a - b)))
    relative = mismatch / scale if scale > 0 else mismatch
    meta = {
        "t_profile": t_profile,
        "two_time_mismatch": mismatch,
        "two_time_relative": relative,
        "scale": scale,
        "trajectory_steps": traj.metadata.get("steps"),
        "max_lipschitz": float(np.max(traj.lipschitz_history)),
    }
    if relative > tolerance:
        raise PropertyFailure(
            "self-similarity-violated", f"two-time mismatch {relative:.3g} > {tolerance:.3g}"
        )
    return Profile(flow, psi1, "evolved", meta)


def profile_residual(profile, radius=None, relative=True):
    """sup_K |A Psi + Psi/alpha - y.grad Psi/alpha - N[Psi]| (optionally over sup_K |A Psi|)."""
    psi, flow = profile.field, profile.flow
    grid = psi.grid
    j = jet(psi, flow.jet_order)
    a_psi = operator_from_jet(j, flow)
    n_psi = rhs_from_jet(j, flow) + a_psi
    y_grad = sum(c * j[g] for c, g in zip(grid.coords, _units(grid.dim)))
    res = a_psi + (j[(0,) * grid.dim] - y_grad) / flow.alpha - n_psi
    mask = reporting_mask(grid, radius)
    value = float(np.max(np.abs(res[mask])))
    if not relative:
        return value
    scale = float(np.max(np.abs(a_psi[mask])))
    return value / scale if scale > 0 else value


def flat_profile(flow, grid):
    return Profile(flow, Field(grid, np.zeros(grid.shape)), "reference")


def with_bump(profile, amplitude, width, center=0.0):
    p = Perturbation("bump", center=(center,), width=width, amplitude=amplitude)
    f = profile.field
    return replace(profile, field=Field(f.grid, f.values + p.bump_values(f.grid), f.background), source="reference")
