"""Mild-solution time integration.

The residual r = u - background obeys

    r_t + A r = F,   F = N[u] - (A bg + bg_t),

which is the Duhamel equation of u whenever the background is evolved
exactly (then A bg + bg_t = 0) and a forced version of it for static
backgrounds. Time stepping is ETDRK4 in Fourier space with graded steps
near t = 0; the forcing is 2/3-dealiased.
"""

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError, NumericalFailure, RegimeViolation
from .fields import Field, jet
from .flows import GRADIENT_CAP, GRADIENT_WARN, gradient_magnitude, operator_from_jet, rhs_from_jet
from .similarity import DEFAULT_EPSILON, REGIME_SLACK

CONTOUR_POINTS = 32
MAX_REJECTIONS = 10
START_FRACTION = 0.01


@dataclass(frozen=True)
class Schedule:
    """Step-size policy: dt = clip(theta t, dt_first, dt_uniform).

    dt_first defaults to START_FRACTION h^alpha: the start step out of a cone
    corner sees an under-resolved forcing, and its error sets the floor.
    """

    dt_uniform: float = 0.01
    theta: float = 0.1
    dt_first: float = None

    def first(self, grid, alpha):
        if self.dt_first is not None:
            return self.dt_first
        return min(START_FRACTION * grid.spacing**alpha, self.dt_uniform)

    def step(self, t, grid, alpha):
        return min(max(self.theta * t, self.first(grid, alpha)), self.dt_uniform)


@dataclass(frozen=True)
class Trajectory:
    flow: object
    times: np.ndarray
    states: tuple
    lipschitz_history: np.ndarray
    metadata: dict = dc_field(default_factory=dict)
    # state after the corner start step, kept for the Duhamel audit
    start_state: object = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t[0] != 0 or np.any(np.diff(t) <= 0):
            raise ConfigError("invalid-trajectory", "times must start at 0 and increase")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "lipschitz_history", np.asarray(self.lipschitz_history, float))

    @property
    def grid(self):
        return self.states[0].grid

    def index(self, t):
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-12 * max(1.0, t):
            raise ConfigError("time-not-stored", f"t={t}")
        return idx

    def state_at(self, t):
        return self.states[self.index(t)]

    def until(self, horizon):
        keep = self.times <= horizon * (1 + 1e-12)
        idx = np.flatnonzero(keep)
        return Trajectory(
            self.flow,
            self.times[idx],
            tuple(self.states[i] for i in idx),
            self.lipschitz_history[idx],
            dict(self.metadata),
            self.start_state,
        )


def etd_coefficients(linear, dt, points=CONTOUR_POINTS):
    """ETDRK4 coefficients for a diagonal linear part (contour-integral means)."""
    hl = dt * linear
    roots = np.exp(1j * np.pi * (np.arange(1, points + 1) - 0.5) / points)
    r = hl.reshape(-1, 1) + roots.reshape(1, -1)
    er = np.exp(r)
    shape = linear.shape

    def mean(expr):
        return dt * np.real(np.mean(expr, axis=1)).reshape(shape)

    return {
        "E": np.exp(hl),
        "E2": np.exp(hl / 2),
        "Q": mean((np.exp(r / 2) - 1) / r),
        "f1": mean((-4 - r + er * (4 - 3 * r + r**2)) / r**3),
        "f2": mean((2 + r + er * (r - 2)) / r**3),
        "f3": mean((-4 - 3 * r - r**2 + er * (4 - r)) / r**3),
    }


class _Forcing:
    """F(r_hat, t) in Fourier space, with the background carried along in time."""

    def __init__(self, grid, flow, background0, t0=0.0, linear_only=False):
        self.grid, self.flow = grid, flow
        self.background0, self.t0 = background0, t0
        self.linear_only = linear_only
        self.mask = grid.dealias_mask
        self.last_grad = 0.0

    def background(self, t):
        bg = self.background0
        if bg is None or not bg.time_dependent:
            return bg
        return bg.advanced(t - self.t0)

    def physical(self, r, t):
        grid, flow = self.grid, self.flow
        bg = self.background(t)
        if bg is None:
            defect = 0.0
        else:
            defect = bg.operator(grid, flow.operator_order) + bg.time_derivative(
                grid, flow.operator_order
            )
        if self.linear_only:
            return -defect * np.ones(grid.shape)
        j = jet(Field(grid, r, bg), flow.jet_order)
        self.last_grad = float(np.max(gradient_magnitude(j)))
        return rhs_from_jet(j, flow) + operator_from_jet(j, flow) - defect

    def __call__(self, r_hat, t):
        f = self.physical(self.grid.ifft(r_hat), t)
        return self.mask * self.grid.fft(f)


def _linear_symbol(grid, flow):
    return -grid.operator_symbol(flow.operator_order)


def _needs_start_step(background):
    from .backgrounds import EvolvedCone, SumBackground

    parts = background.parts if isinstance(background, SumBackground) else [background]
    return any(isinstance(p, EvolvedCone) and p.tau <= 0 for p in parts)


def default_snapshots(grid, alpha, horizon, per_octave=8):
    """Geometric snapshot times from h^alpha / 2 to the horizon, per_octave per doubling."""
    t0 = grid.spacing**alpha / 2
    if horizon <= t0:
        return np.array([horizon])
    n = int(np.ceil(per_octave * np.log2(horizon / t0)))
    times = t0 * 2.0 ** (np.arange(n + 1) / per_octave)
    times = times[times < horizon * (1 - 1e-12)]
    return np.append(times, horizon)


def audit_snapshots(grid, alpha, t_check, intervals, schedule=None, per_octave=8):
    """Snapshot times for duhamel_residual: a geometric layer from the first
    step up to t_check/intervals, then the uniform lattice t_check*j/intervals."""
    start = (schedule or Schedule()).first(grid, alpha)
    top = t_check / intervals
    n = max(int(np.ceil(per_octave * np.log2(top / start))), 0) if top > start else 0
    layer = start * 2.0 ** (np.arange(n) / per_octave)
    lattice = t_check * np.arange(1, intervals + 1) / intervals
    return np.union1d(layer[layer < top * (1 - 1e-12)], lattice)


def integrate(
    u0,
    flow,
    horizon,
    schedule=None,
    *,
    snapshots=None,
    epsilon=DEFAULT_EPSILON,
    lipschitz_constant=2.0,
    linear_only=False,
):
    """ETDRK4 mild solution from u0 on (0, horizon]; returns a Trajectory.

    ``snapshots`` are the stored times (default: geometric, 8 per octave).
    The step never skips a snapshot time.
    """
    if not horizon > 0:
        raise ConfigError("invalid-horizon", f"horizon={horizon}")
    schedule = schedule or Schedule()
    grid = u0.grid
    j0 = jet(u0, 1)
    grad0 = float(np.max(gradient_magnitude(j0)))
    if grad0 > epsilon * (1 + REGIME_SLACK):
        raise RegimeViolation("regime-violation", f"|grad u0| = {grad0:.4g} > eps = {epsilon}")
    snaps = default_snapshots(grid, flow.alpha, horizon) if snapshots is None else snapshots
    snaps = np.unique(np.append(np.asarray(snaps, dtype=float), horizon))
    if np.any(snaps <= 0) or snaps[-1] > horizon * (1 + 1e-12):
        raise ConfigError("invalid-schedule", "snapshots must lie in (0, horizon]")

    forcing = _Forcing(grid, flow, u0.background, linear_only=linear_only)
    linear = _linear_symbol(grid, flow)
    r_hat = grid.fft(u0.values)
    t = 0.0
    times, states, lips = [0.0], [u0], [grad0]
    steps, rejections, coeffs, coeff_dt = 0, 0, None, None
    max_grad = grad0
    start_state, start_time = None, None

    if u0.background is not None and _needs_start_step(u0.background):
        # exact cone corner: F is undefined at t = 0, so predict with the linear
        # semigroup and correct with F frozen at the predicted end state
        dt = min(schedule.first(grid, flow.alpha), snaps[0])
        predicted = np.exp(dt * linear) * r_hat
        weight = dt * _phi1_int(-dt * linear)
        r_hat = predicted + weight * forcing(predicted, dt)
        t = start_time = dt
        start_state = Field(grid, grid.ifft(r_hat), forcing.background(t))
        steps += 1
        if np.isclose(t, snaps[0], rtol=1e-12):
            snaps = snaps[1:]
            _record(forcing, grid, r_hat, t, times, states, lips)

    for target in snaps:
        while t < target * (1 - 1e-13):
            dt = min(schedule.step(t, grid, flow.alpha), target - t)
            for attempt in range(MAX_REJECTIONS + 1):
                if coeff_dt is None or not np.isclose(dt, coeff_dt, rtol=1e-13, atol=0):
                    coeffs, coeff_dt = etd_coefficients(linear, dt), dt
                new = _etdrk4_step(r_hat, t, dt, coeffs, forcing)
                if np.all(np.isfinite(new)):
                    break
                rejections += 1
                dt /= 2
            else:
                raise NumericalFailure("step-rejection-overflow", f"t={t:.4g}")
            r_hat, t = new, t + dt
            steps += 1
            max_grad = max(max_grad, forcing.last_grad)
            _check_gradient(forcing.last_grad, t)
        t = float(target)
        lip = _record(forcing, grid, r_hat, t, times, states, lips)
        max_grad = max(max_grad, lip)
        _check_gradient(lip, t)

    history = np.array(lips)
    flagged = bool(np.max(history) > lipschitz_constant * max(grad0, 1e-300)) if grad0 > 0 else False
    meta = {
        "steps": steps,
        "rejections": rejections,
        "dt_uniform": schedule.dt_uniform,
        "theta": schedule.theta,
        "dt_first": schedule.first(grid, flow.alpha),
        "grad0": grad0,
        "max_grad": float(max_grad),
        "lipschitz_constant": lipschitz_constant,
        "lipschitz_flagged": flagged,
        "linear_only": linear_only,
        "start_time": start_time,
    }
    return Trajectory(flow, np.array(times), tuple(states), history, meta, start_state)


def _record(forcing, grid, r_hat, t, times, states, lips):
    state = Field(grid, grid.ifft(r_hat), forcing.background(t))
    lip = float(np.max(gradient_magnitude(jet(state, 1))))
    times.append(t)
    states.append(state)
    lips.append(lip)
    return lip


def _check_gradient(value, t):
    if value > GRADIENT_CAP:
        raise RegimeViolation("gradient-blowup", f"|grad u| = {value:.4g} at t = {t:.4g}")
    if value > GRADIENT_WARN:
        warnings.warn(f"|grad u| = {value:.3g} at t = {t:.3g}", RuntimeWarning)


def _etdrk4_step(v, t, dt, c, forcing):
    nv = forcing(v, t)
    a = c["E2"] * v + c["Q"] * nv
    na = forcing(a, t + dt / 2)
    b = c["E2"] * v + c["Q"] * na
    nb = forcing(b, t + dt / 2)
    cc = c["E2"] * a + c["Q"] * (2 * nb - nv)
    nc = forcing(cc, t + dt)
    return c["E"] * v + c["f1"] * nv + 2 * c["f2"] * (na + nb) + c["f3"] * nc


def _phi1_int(z):
    """(1 - exp(-z)) / z, stable at z -> 0."""
    z = np.asarray(z, dtype=float)
    small = z < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1 - z / 2, -np.expm1(-safe) / safe)


def _phi2_int(z):
    """(1 - exp(-z)(1 + z)) / z^2, stable at z -> 0."""
    z = np.asarray(z, dtype=float)
    small = z < 1e-3
    safe = np.where(small, 1.0, z)
    series = 0.5 - z / 3 + z**2 / 8 - z**3 / 30
    return np.where(small, series, (-np.expm1(-safe) - safe * np.exp(-safe)) / safe**2)


def apply_semigroup(u, t, flow):
    """exp(-tA) u: Fourier multiplier on the residual, exact or corrected background."""
    if t < 0:
        raise ConfigError("negative-time", f"t={t}")
    if t == 0:
        return u
    grid = u.grid
    lam = grid.operator_symbol(flow.operator_order)
    vals_hat = np.exp(-t * lam) * grid.fft(u.values)
    bg = u.background
    if bg is None:
        return Field(grid, grid.ifft(vals_hat))
    if bg.time_dependent:
        defect = bg.operator(grid, flow.operator_order) + bg.time_derivative(grid, flow.operator_order)
        if np.max(np.abs(defect)) > 1e-12:
            raise ConfigError("background-not-evolvable", "time-dependent background of a different flow")
        return Field(grid, grid.ifft(vals_hat), bg.advanced(t))
    # static background: exp(-tA) bg = bg - int_0^t exp(-sA) A bg ds
    a_bg = grid.fft(bg.operator(grid, flow.operator_order))
    vals_hat = vals_hat - t * _phi1_int(t * lam) * a_bg
    return Field(grid, grid.ifft(vals_hat), bg)


def duhamel_residual(traj, t_check, quadrature_nodes=None):
    """sup |r(t) - exp(-tA) r0 - int_0^t exp(-(t-s)A) F(s) ds| from stored states.

    F is interpolated linearly in s between nodes and the exponential weight
    is integrated exactly. Nodes are all stored times in [0, t_check]; with
    ``quadrature_nodes`` q they are the lattice t_check*j/q plus every stored
    time below t_check/q, so the initial layer stays resolved while the bulk
    spacing is refined.
    """
    grid, flow = traj.grid, traj.flow
    end = traj.index(t_check)
    idx = np.arange(end + 1)
    if quadrature_nodes is not None:
        q = int(quadrature_nodes)
        try:
            lattice = [traj.index(t_check * j / q) for j in range(1, q + 1)]
        except ConfigError:
            raise ConfigError("insufficient-snapshots", f"lattice t*j/{q} not stored") from None
        layer = np.flatnonzero(traj.times[: end + 1] < t_check / q * (1 - 1e-12))
        idx = np.unique(np.concatenate([layer, lattice]))
    if idx.size < 2:
        raise ConfigError("insufficient-snapshots", "need at least two stored states")
    times = traj.times[idx]
    lam = grid.operator_symbol(flow.operator_order)
    forcing = _Forcing(grid, flow, traj.states[0].background, t0=0.0, linear_only=traj.metadata.get("linear_only", False))

    def f_hat(i):
        state = traj.states[i]
        forcing.background0, forcing.t0 = state.background, traj.times[i]
        return forcing(grid.fft(state.values), traj.times[i])

    fs = []
    for i in idx:
        try:
            fs.append(f_hat(i))
        except NumericalFailure:
            fs.append(None)
    head = 0.0
    if fs[0] is None:
        # corner at s = 0: F is not defined there and is under-resolved until
        # the start step; past it the smoothed integrand is regular, so F at the
        # interval start is extrapolated linearly from the next two nodes
        if times.size < 3:
            raise ConfigError("insufficient-snapshots", "corner data needs two nodes past t = 0")
        t_start = traj.metadata.get("start_time")
        if traj.start_state is not None and t_start and t_start < times[1]:
            forcing.background0, forcing.t0 = traj.start_state.background, t_start
            f_start = forcing(grid.fft(traj.start_state.values), t_start)
            z = lam * t_start
            head = np.exp(-(t_check - t_start) * lam) * t_start * _phi1_int(z) * f_start
            times = times.copy()
            times[0] = t_start
        w = (times[1] - times[0]) / (times[2] - times[1])
        fs[0] = fs[1] + w * (fs[1] - fs[2])
    total = np.exp(-t_check * lam) * grid.fft(traj.states[0].values) + head
    for k in range(times.size - 1):
        s0, s1 = times[k], times[k + 1]
        width = s1 - s0
        decay = np.exp(-(t_check - s1) * lam)
        z = lam * width
        w_end = width * _phi1_int(z)
        w_lin = width * _phi2_int(z)
        # F(s) = F1 - (s1 - s)/width (F1 - F0)
        total = total + decay * (w_end * fs[k + 1] - w_lin * (fs[k + 1] - fs[k]))
    predicted = grid.ifft(total)
    return float(np.max(np.abs(traj.states[end].values - predicted)))


def _time_derivative(values, times, i, k):
    if k == 0:
        return values[i]
    tm, t0, tp = times[i - 1], times[i], times[i + 1]
    fm, f0, fp = values[i - 1], values[i], values[i + 1]
    hm, hp = t0 - tm, tp - t0
    if k == 1:
        return (-hp / (hm * (hm + hp))) * fm + ((hp - hm) / (hm * hp)) * f0 + (hm / (hp * (hm + hp))) * fp
    if k == 2:
        return 2 * (fm / (hm * (hm + hp)) - f0 / (hm * hp) + fp / (hp * (hm + hp)))
    raise ConfigError("order-too-high", f"time derivative {k}")


def regularity_diagnostic(traj, gamma_max=2, k_max=1, t_min=0.0):
    """sup_x |grad^gamma d_t^k grad u| t^(|gamma|/alpha + k) / |grad u0| over stored times."""
    if k_max > 2 or gamma_max > 3:
        raise ConfigError("order-too-high", "gamma_max <= 3 and k_max <= 2")
    alpha = traj.flow.alpha
    usable = [i for i in range(1, len(traj.times)) if traj.times[i] > t_min]
    if len(usable) < 3:
        raise ConfigError("insufficient-snapshots", "need three consecutive states")
    grad0 = float(traj.lipschitz_history[0])
    jets = {i: jet(traj.states[i], gamma_max + 1) for i in usable}
    report = {}
    for g in range(gamma_max + 1):
        for k in range(k_max + 1):
            order = g + 1
            ts, ratios = [], []
            inner = usable[1:-1] if k else usable
            for i in inner:
                keys = list(jets[i].higher(order))
                comps = []
                for key in keys:
                    if k:
                        seq = {m: jets[m][key] for m in (i - 1, i, i + 1)}
                        comps.append(_time_derivative(seq, traj.times, i, k))
                    else:
                        comps.append(jets[i][key])
                mag = float(np.max(np.sqrt(sum(c**2 for c in comps))))
                t = traj.times[i]
                ts.append(t)
                ratios.append(mag * t ** (g / alpha + k) / grad0 if grad0 > 0 else mag)
            ratios = np.array(ratios)
            half = ratios[len(ratios) // 2 :]
            report[f"gamma{g}_k{k}"] = {
                "times": ts,
                "ratios": ratios.tolist(),
                "max": float(np.max(ratios)) if ratios.size else 0.0,
                "late_max": float(np.max(half)) if half.size else 0.0,
            }
    return report
