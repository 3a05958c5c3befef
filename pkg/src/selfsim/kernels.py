"""Heat and biharmonic kernels and numerical certification of their estimates.

The heat kernel h(x, t) = (4 pi t)^(-n/2) exp(-|x|^2 / 4t) is closed form.
The biharmonic kernel b(x, t) = t^(-n/4) g(x t^(-1/4)) has no closed form;
its radial profile g (and derivatives) is obtained by Gauss-Legendre
Fourier inversion of exp(-|k|^4), tabulated once on a fine radial grid and
cubic-splined. Normalization is fixed by the symbol value at k = 0, so the
kernel has unit mass.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline

from .errors import ConfigError, NumericalFailure
from .grid import Grid

KINDS = ("heat", "biharmonic")

# exp(-K^4) ~ 3e-20 beyond the truncation of the inversion integral
_K_CUT = 45.0**0.25
_XI_MAX = 64.0
_TABLE_STEP = 1.0 / 128.0
_INVERSION_NODES = 384
_INVERSION_TOL = 1e-9


def scaling_order(kind):
    """alpha' such that K(x, t) = t^(-n/alpha') K(x t^(-1/alpha'), 1)."""
    if kind == "heat":
        return 2
    if kind == "biharmonic":
        return 4
    raise ConfigError("unknown-kernel", kind)


def _legendre(nodes):
    x, w = np.polynomial.legendre.leggauss(nodes)
    k = 0.5 * _K_CUT * (x + 1.0)
    return k, 0.5 * _K_CUT * w


def _invert_1d(xi, nodes):
    """g, g', g'', g''' and the cone integrals S = G', G of the 1D profile."""
    k, w = _legendre(nodes)
    decay = np.exp(-(k**4))
    phase = np.outer(xi, k)
    cos, sin = np.cos(phase), np.sin(phase)
    out = {}
    out[0] = cos @ (w * decay) / np.pi
    out[1] = -sin @ (w * k * decay) / np.pi
    out[2] = -cos @ (w * k**2 * decay) / np.pi
    out[3] = sin @ (w * k**3 * decay) / np.pi
    out["S"] = 2.0 / np.pi * (sin @ (w * decay / k))
    # 1 - cos(a) e^{-b} written to avoid cancellation at small k
    one_minus = 2.0 * np.sin(0.5 * phase) ** 2 - cos * np.expm1(-(k**4))
    out["G"] = 2.0 / np.pi * (one_minus @ (w / k**2) + 1.0 / _K_CUT)
    return out


def _invert_2d(r, nodes):
    """Radial profile g(r) of the 2D kernel and its first two r-derivatives."""
    k, w = _legendre(nodes)
    decay = np.exp(-(k**4))
    z = np.outer(r, k)
    j0, j1 = special.j0(z), special.j1(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        j1_over_z = np.where(z > 0, j1 / np.where(z > 0, z, 1.0), 0.5)
    out = {}
    out[0] = j0 @ (w * k * decay) / (2 * np.pi)
    out[1] = -j1 @ (w * k**2 * decay) / (2 * np.pi)
    out[2] = -(j0 - j1_over_z) @ (w * k**3 * decay) / (2 * np.pi)
    return out


@lru_cache(maxsize=None)
def _biharmonic_tables(dim):
    xi = np.arange(0.0, _XI_MAX + _TABLE_STEP / 2, _TABLE_STEP)
    invert = _invert_1d if dim == 1 else _invert_2d
    coarse = invert(xi, _INVERSION_NODES)
    fine = invert(xi, 2 * _INVERSION_NODES)
    for key in coarse:
        change = np.max(np.abs(coarse[key] - fine[key]))
        if change > _INVERSION_TOL:
            raise NumericalFailure(
                "quadrature-not-converged", f"profile {key!r} changed by {change:.2e}"
            )
    return {key: CubicSpline(xi, vals) for key, vals in fine.items()}


# parity of each tabulated 1D function under xi -> -xi
_PARITY_1D = {0: 1, 1: -1, 2: 1, 3: -1, "S": -1, "G": 1}


def biharmonic_profile(xi, order=0, dim=1):
    """Derivative ``order`` of the unit-time biharmonic profile g.

    In 1D ``xi`` is signed; ``order`` may also be ``"S"`` (= 2 int_0^xi g)
    or ``"G"`` (= int |xi - eta| g(eta) d eta), the heat-like smoothing of
    |x|. In 2D ``xi`` is the radius and ``order`` the radial derivative.
    """
    xi = np.asarray(xi, dtype=float)
    a = np.abs(xi)
    table = _biharmonic_tables(dim)
    if order not in table:
        raise ConfigError("order-too-high", f"profile order {order} unavailable in {dim}D")
    inside = a <= _XI_MAX
    vals = np.where(inside, table[order](np.minimum(a, _XI_MAX)), 0.0)
    if dim == 1:
        if order == "S":
            vals = np.where(inside, vals, 1.0)
        elif order == "G":
            vals = np.where(inside, vals, a)
        vals = np.where(xi < 0, _PARITY_1D[order] * vals, vals)
    return vals


def heat_profile(xi, order=0, dim=1):
    """Derivatives of the unit-time heat profile (4 pi)^(-n/2) exp(-r^2/4)."""
    xi = np.asarray(xi, dtype=float)
    f = (4 * np.pi) ** (-dim / 2) * np.exp(-(xi**2) / 4)
    if order == 0:
        return f
    if order == 1:
        return -xi / 2 * f
    if order == 2:
        return (xi**2 / 4 - 0.5) * f
    if order == 3 and dim == 1:
        return (-(xi**3) / 8 + 3 * xi / 4) * f
    raise ConfigError("order-too-high", f"heat profile order {order} in {dim}D")


def profile(kind, xi, order=0, dim=1):
    if kind == "heat":
        return heat_profile(xi, order, dim)
    if kind == "biharmonic":
        return biharmonic_profile(xi, order, dim)
    raise ConfigError("unknown-kernel", kind)


def derivative_magnitude(kind, dim, radius, t, order):
    """|grad^order K(x, t)| (Frobenius norm) at distance ``radius``."""
    ap = scaling_order(kind)
    xi = np.asarray(radius, dtype=float) * t ** (-1.0 / ap)
    scale = t ** (-(dim + order) / ap)
    if dim == 1 or order <= 1:
        return scale * np.abs(profile(kind, xi, order, dim))
    if order == 2:
        f1 = profile(kind, xi, 1, dim)
        f2 = profile(kind, xi, 2, dim)
        with np.errstate(divide="ignore", invalid="ignore"):
            tangential = np.where(xi > 0, f1 / np.where(xi > 0, xi, 1.0), f2)
        return scale * np.sqrt(f2**2 + tangential**2)
    raise ConfigError("order-too-high", f"|grad^{order} K| in {dim}D")


@dataclass(frozen=True)
class KernelTable:
    kind: str
    dim: int
    time: float
    grid: Grid
    values: np.ndarray
    mass: float


def _table(kind, grid, t):
    if not t > 0:
        raise ConfigError("nonpositive-time", f"t={t}")
    ap = scaling_order(kind)
    width = t ** (1.0 / ap)
    if width < 2 * grid.spacing:
        raise NumericalFailure(
            "under-resolved", f"{kind} kernel width {width:.3g} < 2h = {2 * grid.spacing:.3g}"
        )
    values = t ** (-grid.dim / ap) * profile(kind, grid.radius * t ** (-1.0 / ap), 0, grid.dim)
    values = np.ascontiguousarray(values)
    values.setflags(write=False)
    mass = float(values.sum() * grid.cell_volume)
    return KernelTable(kind, grid.dim, float(t), grid, values, mass)


def heat_kernel(grid, t):
    return _table("heat", grid, t)


def biharmonic_kernel(grid, t):
    return _table("biharmonic", grid, t)


@dataclass(frozen=True)
class EstimateFit:
    estimate_id: str
    dim: int
    derivative_order: int
    fitted_constant: float
    fitted_rate: float
    residual: float
    p: float = float("nan")


def verify_pointwise_decay(table, derivative_order=0, floor=1e-12):
    """Fit |grad^k K(x,t)| <= C t^(-(n+k)/a) exp(-c (|x| t^(-1/a))^q).

    The exponent q is fixed (4/3 for the biharmonic kernel, 2 for the
    Gaussian) and only (C, c) are fitted: c from a least-squares line
    through the monotone upper envelope of log|grad^k K| versus
    z = (|x| t^(-1/a))^q, then C as the smallest constant making the bound
    hold at every sample with |x| >= t^(1/a). Samples below ``floor``
    times the largest sampled value are round-off and are excluded.
    ``residual`` is max(sample / bound) - 1, so residual <= 0 certifies the
    bound on the sample set.
    """
    kind, dim, t = table.kind, table.dim, table.time
    ap = scaling_order(kind)
    q = ap / (ap - 1.0)
    xi = table.grid.radius.ravel() * t ** (-1.0 / ap)
    vals = derivative_magnitude(kind, dim, table.grid.radius.ravel(), t, derivative_order)
    keep = xi >= 1.0
    xi, vals = xi[keep], vals[keep]
    keep = vals > floor * vals.max()
    xi, vals = xi[keep], vals[keep]
    if xi.size < 3:
        raise NumericalFailure("fit-infeasible", "too few samples above the round-off floor")
    order = np.argsort(xi)
    z = xi[order] ** q
    y = np.log(vals[order]) + (dim + derivative_order) / ap * np.log(t)
    envelope = np.maximum.accumulate(y[::-1])[::-1]
    slope, _ = np.polyfit(z, envelope, 1)
    c = -slope
    if not c > 0:
        raise NumericalFailure("fit-infeasible", f"fitted decay constant {c:.3g} <= 0")
    log_c = np.max(y + c * z)
    constant = float(np.exp(log_c) * (1 + 1e-12))
    bound = constant * np.exp(-c * z)
    residual = float(np.max(np.exp(y) / bound) - 1.0)
    return EstimateFit(f"pointwise-{kind}", dim, derivative_order, constant, float(c), residual)


def lp_range(kind, dim, derivative_order):
    """Open upper end of the p-range where the space-time L^p norm is finite."""
    ap = scaling_order(kind)
    return (dim + ap) / (dim + derivative_order)


def expected_lp_exponent(kind, dim, derivative_order, p):
    ap = scaling_order(kind)
    return ((dim + ap) - p * (dim + derivative_order)) / (ap * p)


def _slice_integral(kind, dim, order, p, s, nodes=40001):
    """int_{R^n} |grad^k K(x, s)|^p dx by trapezoid quadrature on a radial grid."""
    ap = scaling_order(kind)
    reach = (40.0 if kind == "heat" else _XI_MAX) * s ** (1.0 / ap)
    r = np.linspace(0.0, reach, nodes)
    f = derivative_magnitude(kind, dim, r, s, order) ** p
    if dim == 1:
        return 2.0 * integrate.trapezoid(f, r)
    return 2.0 * np.pi * integrate.trapezoid(f * r, r)


def lp_spacetime_norm(kind, derivative_order, p, t, dim=1):
    """||grad^k K||_{L^p(R^n x (0, t))} by nested numerical quadrature."""
    upper = lp_range(kind, dim, derivative_order)
    if not (1 <= p < upper):
        raise ConfigError(
            "p-out-of-range", f"p={p} outside [1, {upper:.4g}) for {kind} k={derivative_order}"
        )
    value, _ = integrate.quad(
        lambda s: _slice_integral(kind, dim, derivative_order, p, s),
        0.0,
        t,
        limit=200,
        epsabs=0.0,
        epsrel=1e-9,
    )
    return value ** (1.0 / p)


def fit_lp_exponent(kind, derivative_order, p, dim=1, times=None):
    """Log-log slope of t -> ||grad^k K||_{L^p(R^n x (0,t))} over ``times``."""
    if times is None:
        times = np.logspace(-2, 0, 5)
    norms = [lp_spacetime_norm(kind, derivative_order, p, t, dim) for t in times]
    slope, intercept = np.polyfit(np.log(times), np.log(norms), 1)
    expected = expected_lp_exponent(kind, dim, derivative_order, p)
    return EstimateFit(
        f"lp-{kind}",
        dim,
        derivative_order,
        float(np.exp(intercept)),
        float(slope),
        float(abs(slope - expected)),
        float(p),
    )


def convolve(table, field):
    """Periodic convolution of a kernel table with the residual of ``field``."""
    from .fields import Field

    if field.background is not None:
        raise ConfigError("background-present", "split the background before convolving")
    if field.grid != table.grid:
        raise ConfigError("grid-mismatch")
    grid = table.grid
    kernel_hat = grid.fft(np.fft.ifftshift(table.values)) * grid.cell_volume
    out = grid.ifft(kernel_hat * grid.fft(field.values))
    return Field(grid, out)


def singular_integral_ratio(dim, p, points_per_axis, steps=32, horizon=1.0, batch=4, seed=0):
    """Largest ||S g||_p / ||g||_p over a white-noise batch.

    S g = int_0^t grad^4 b(. - y, t - s) g(y, s) dy ds with grad^4 the
    pure x-derivative d_x^4, evaluated spectrally on a 2 pi-periodic box
    with g piecewise constant in time (exact exponential integration).
    """
    grid = Grid(dim, points_per_axis, np.pi)
    rng = np.random.default_rng(seed)
    dt = horizon / steps
    k4 = grid.k_squared**2
    kx4 = grid.wavenumbers[0] ** 4
    with np.errstate(divide="ignore", invalid="ignore"):
        weight = np.where(k4 > 0, kx4 / np.where(k4 > 0, k4, 1.0), 0.0)
    decay = np.exp(-dt * k4)
    gain = weight * (1.0 - decay)
    worst = 0.0
    for _ in range(batch):
        s_hat = np.zeros(grid.spectral_shape, dtype=complex)
        num = den = 0.0
        for _ in range(steps):
            g = rng.standard_normal(grid.shape)
            s_hat = decay * s_hat + gain * grid.fft(g)
            num += np.sum(np.abs(grid.ifft(s_hat)) ** p)
            den += np.sum(np.abs(g) ** p)
        worst = max(worst, (num / den) ** (1.0 / p))
    return worst
