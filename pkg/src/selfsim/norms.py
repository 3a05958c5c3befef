"""Scale-invariant and weighted space-time norms.

Cylinder terms sup_x sup_R w(x) R^s ||f||_{L^p(B_R(x) x (R^a/2, R^a))}
are discretized with centers on every 4th node (kept a radius away from
the box edge), dyadic radii R = h 2^j, ball sums by FFT convolution and
a piecewise-linear time integral between stored snapshots.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError
from .fields import Field, jet
from .flows import duhamel_nonlinearity, gradient_magnitude

CENTER_STRIDE = 4
MIN_WINDOW_SNAPSHOTS = 4
FAMILIES = ("XT", "XT_beta", "YT_beta", "Yl_beta")


def exponent_table(kind, dim, family, l=None):
    """(p, R-power, time exponent a) with Q_R = B_R x (R^a/2, R^a)."""
    n = dim
    if kind == "MCF":
        if family == "Yl_beta":
            raise ConfigError("invalid-norm", "Y_l spaces belong to the fourth-order flows")
        return (n + 4, 2 / (n + 4), 2)
    if family == "Yl_beta":
        if l not in (0, 1, 2):
            raise ConfigError("invalid-norm", f"l={l}")
        return ((n + 6) / (3 - l), (6, 4, 2)[l] / (n + 6), 4)
    return (n + 6, 2 / (n + 6), 4)


_HARD_TABLE = {
    ("MCF", 1): (5, 2 / 5, 2),
    ("MCF", 2): (6, 2 / 6, 2),
    ("WF", 1): (7, 2 / 7, 4),
    ("WF", 2): (8, 2 / 8, 4),
}


@dataclass(frozen=True)
class NormSpec:
    family: str
    flow: object
    beta: float = 0.0
    l: int = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError("invalid-norm", self.family)
        if self.beta < 0:
            raise ConfigError("invalid-norm", "beta must be >= 0")

    def exponents(self, dim):
        p, s, a = exponent_table(self.flow.kind, dim, self.family, self.l)
        if self.family in ("XT", "XT_beta"):
            key = ("MCF" if self.flow.kind == "MCF" else "WF", dim)
            if (p, s, a) != _HARD_TABLE[key]:
                raise ConfigError("exponent-table-mismatch", str(key))
        return p, s, a

    @property
    def weighted(self):
        return self.family != "XT"


@dataclass(frozen=True)
class NormReport:
    sup_part: float
    cylinder_part: float
    argmax: dict = dc_field(default_factory=dict)

    @property
    def total(self):
        return self.sup_part + self.cylinder_part

    def as_dict(self):
        return {
            "sup_part": self.sup_part,
            "cylinder_part": self.cylinder_part,
            "total": self.total,
            "argmax": self.argmax,
        }


def weight(grid, beta, weighted=True):
    if not weighted:
        return np.ones(grid.shape)
    return 1.0 + grid.radius**beta


def weighted_lipschitz(p, beta):
    """[p]_beta = max (1 + |x|^beta) |grad p| on the grid."""
    j = jet(p, 1)
    return float(np.max(weight(p.grid, beta) * gradient_magnitude(j)))


def _ball_kernel_hat(grid, radius):
    # ball indicator centred at node 0 of the periodic lattice, in rfft layout
    coords = [np.fft.ifftshift(c) for c in grid.coords]
    dist = np.sqrt(sum(c**2 for c in coords))
    return np.fft.rfftn((dist <= radius + 1e-12).astype(float))


def _centers(grid, radius):
    stride = CENTER_STRIDE
    sel = np.zeros(grid.shape, dtype=bool)
    idx = tuple(slice(0, None, stride) for _ in range(grid.dim))
    sel[idx] = True
    inside = np.all(np.abs(np.stack(grid.coords)) <= grid.half_width - radius, axis=0)
    return sel & inside


def _radii(grid, T, a):
    radii = []
    R = grid.spacing
    while R**a < T and R <= grid.half_width / 2:
        radii.append(R)
        R *= 2
    return radii


def _window_integral(times, samples_fn, lo, hi):
    """int_lo^hi of a piecewise-linear-in-time interpolant of samples."""
    if times[0] > lo * (1 + 1e-12) or times[-1] < hi * (1 - 1e-12):
        raise ConfigError("insufficient-snapshots", f"window ({lo:.3g}, {hi:.3g}) not covered")
    inner = np.flatnonzero((times > lo) & (times < hi))
    if inner.size + 1 < MIN_WINDOW_SNAPSHOTS:
        raise ConfigError(
            "insufficient-snapshots", f"{inner.size} snapshots inside window ({lo:.3g}, {hi:.3g})"
        )
    nodes = np.concatenate(([lo], times[inner], [hi]))
    values = [_interp_in_time(times, samples_fn, s) for s in nodes]
    total = 0.0
    for k in range(nodes.size - 1):
        total = total + 0.5 * (nodes[k + 1] - nodes[k]) * (values[k] + values[k + 1])
    return total


def _interp_in_time(times, samples_fn, s):
    i = int(np.searchsorted(times, s))
    if i < times.size and abs(times[i] - s) <= 1e-12 * max(s, 1e-300):
        return samples_fn(i)
    lo, hi = i - 1, i
    w = (s - times[lo]) / (times[hi] - times[lo])
    return (1 - w) * samples_fn(lo) + w * samples_fn(hi)


def cylinder_sup(grid, times, arrays, p, power, a, T, beta=0.0, weighted=False):
    """sup over centers and dyadic R of w(x) R^power ||f||_{L^p(Q_R(x))}; f = arrays[i] at times[i]."""
    times = np.asarray(times, dtype=float)
    w = weight(grid, beta, weighted)
    best, arg = 0.0, {"x": None, "R": None}
    cache = {}

    def abs_p(i):
        if i not in cache:
            cache[i] = np.abs(arrays[i]) ** p
        return cache[i]

    for R in _radii(grid, T, a):
        centers = _centers(grid, R)
        if not np.any(centers):
            continue
        k_hat = _ball_kernel_hat(grid, R)
        ball = {}

        def ball_sum(i):
            if i not in ball:
                ball[i] = grid.ifft(grid.fft(abs_p(i)) * k_hat) * grid.cell_volume
            return ball[i]

        integral = _window_integral(times, ball_sum, R**a / 2, R**a)
        vals = w * R**power * np.maximum(integral, 0.0) ** (1.0 / p)
        vals = np.where(centers, vals, -np.inf)
        k = int(np.argmax(vals))
        if vals.flat[k] > best:
            best = float(vals.flat[k])
            arg = {"x": [float(c.flat[k]) for c in grid.coords], "R": float(R)}
    return best, arg


def _times_upto(traj, T):
    keep = np.flatnonzero(traj.times <= T * (1 + 1e-12))
    return keep


def _snapshot_sup(traj, T, beta, weighted):
    grid = traj.grid
    w = weight(grid, beta, weighted)
    best, arg = 0.0, {}
    for i in _times_upto(traj, T):
        if traj.times[i] <= 0:
            continue
        g = w * gradient_magnitude(jet(traj.states[i], 1))
        k = int(np.argmax(g))
        if g.flat[k] > best:
            best = float(g.flat[k])
            arg = {"t": float(traj.times[i]), "x": [float(c.flat[k]) for c in grid.coords]}
    return best, arg


def _hessian_norms(traj, idx):
    out = {}
    for i in idx:
        h = jet(traj.states[i], 2).hess
        out[i] = np.sqrt(np.sum(h**2, axis=(0, 1)))
    return out


def xt_norm(traj, T, spec):
    """X_T norm (or X_T^beta when spec.family == 'XT_beta')."""
    if spec.family not in ("XT", "XT_beta"):
        raise ConfigError("invalid-norm", "xt_norm evaluates X_T and X_T^beta")
    grid = traj.grid
    p, power, a = spec.exponents(grid.dim)
    weighted = spec.family == "XT_beta"
    idx = _times_upto(traj, T)
    sup_part, sup_arg = _snapshot_sup(traj, T, spec.beta, weighted)
    idx = idx[traj.times[idx] > 0]
    hess = _hessian_norms(traj, idx)
    times = traj.times[idx]
    arrays = [hess[i] for i in idx]
    cyl, cyl_arg = cylinder_sup(grid, times, arrays, p, power, a, T, spec.beta, weighted)
    return NormReport(sup_part, cyl, {"sup": sup_arg, "cylinder": cyl_arg})


def weighted_norms(traj, T, spec, g=None):
    """X_T^beta via xt_norm; Y_T^beta / Y_{l,T}^beta of g (one array per stored time)."""
    if spec.family in ("XT", "XT_beta"):
        return xt_norm(traj, T, spec)
    if g is None:
        raise ConfigError("missing-source", "Y norms need g sampled at the stored times")
    grid = traj.grid
    p, power, a = spec.exponents(grid.dim)
    idx = _times_upto(traj, T)
    idx = idx[traj.times[idx] > 0]
    times = traj.times[idx]
    arrays = [np.asarray(g[i]) for i in idx]
    cyl, arg = cylinder_sup(grid, times, arrays, p, power, a, T, spec.beta, True)
    return NormReport(0.0, cyl, {"cylinder": arg})


def rescale_trajectory(traj, lam):
    """u_lam(x, t) = u(lam x, lam^alpha t) / lam on the stored snapshots."""
    from .semigroup import Trajectory
    from .similarity import rescale

    alpha = traj.flow.alpha
    states = tuple(rescale(s, lam) for s in traj.states)
    lips = [float(np.max(gradient_magnitude(jet(s, 1)))) for s in states]
    return Trajectory(traj.flow, traj.times / lam**alpha, states, lips, dict(traj.metadata))


def nonlinearity_difference(traj_u, traj_v):
    """N[u] - N[v] at each common stored time (zero at t = 0 where N may be undefined)."""
    if not np.allclose(traj_u.times, traj_v.times):
        raise ConfigError("time-mismatch", "trajectories must share snapshot times")
    out = []
    for t, su, sv in zip(traj_u.times, traj_u.states, traj_v.states):
        if t <= 0:
            out.append(np.zeros(su.grid.shape))
            continue
        out.append(duhamel_nonlinearity(su, traj_u.flow).values - duhamel_nonlinearity(sv, traj_v.flow).values)
    return out


def difference_trajectory(traj_u, traj_v):
    from .semigroup import Trajectory

    states = tuple(Field(a.grid, a.full() - b.full()) for a, b in zip(traj_u.states, traj_v.states))
    lips = [float(np.max(gradient_magnitude(jet(s, 1)))) for s in states]
    return Trajectory(traj_u.flow, traj_u.times, states, lips, {})


def contraction_witness(traj_u, traj_v, T, beta):
    """Fitted C in ||N[u]-N[v]||_Y <= C (|u|^q + |v|^q) ||u-v||_{X^beta}.

    q = 2 for MCF (Y_T^beta), q = 1 for the fourth-order flows, where the
    difference of the full nonlinearity is measured in Y_{0,T}^beta.
    """
    flow = traj_u.flow
    q = 2 if flow.kind == "MCF" else 1
    xu = xt_norm(traj_u, T, NormSpec("XT", flow)).total
    xv = xt_norm(traj_v, T, NormSpec("XT", flow)).total
    diff = difference_trajectory(traj_u, traj_v)
    xd = xt_norm(diff, T, NormSpec("XT_beta", flow, beta)).total
    family, l = ("YT_beta", None) if flow.kind == "MCF" else ("Yl_beta", 0)
    y = weighted_norms(traj_u, T, NormSpec(family, flow, beta, l), g=nonlinearity_difference(traj_u, traj_v)).total
    denom = (xu**q + xv**q) * xd
    return {
        "Y_difference": y,
        "X_u": xu,
        "X_v": xv,
        "X_beta_difference": xd,
        "power": q,
        "fitted_C": y / denom if denom > 0 else (0.0 if y == 0 else np.inf),
    }
