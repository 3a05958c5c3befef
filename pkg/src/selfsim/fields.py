"""Fields on a grid, spectral calculus and the background split."""

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy import signal

from .backgrounds import background_from_dict
from .errors import ConfigError, NumericalFailure
from .grid import Grid, multi_indices

MAX_ORDER = 4
RING_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class Field:
    """Samples ``values`` of a periodic residual plus an optional analytic background.

    The represented function is ``background + values``. Without a
    background ``values`` is the whole function.
    """

    grid: Grid
    values: np.ndarray
    background: object = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ConfigError("shape-mismatch", f"{vals.shape} vs {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise NumericalFailure("non-finite-values")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def full(self):
        """Samples of the complete function (background included)."""
        if self.background is None:
            return self.values.copy()
        return self.values + self.background.values(self.grid)

    def with_values(self, values):
        return Field(self.grid, values, self.background)

    def __add__(self, other):
        if isinstance(other, Field):
            bg = _sum_backgrounds(self.background, other.background)
            return Field(self.grid, self.values + other.values, bg)
        return Field(self.grid, self.values + other, self.background)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, scalar):
        if self.background is not None and scalar != 1.0:
            raise ConfigError("scaled-background", "scale the background explicitly")
        return Field(self.grid, scalar * self.values, self.background)


def _sum_backgrounds(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


@dataclass(frozen=True)
class Jet:
    """All partial derivatives up to some order, keyed by multi-index."""

    grid: Grid
    partials: dict = dc_field(repr=False)

    @property
    def order(self):
        return max(sum(g) for g in self.partials)

    def __getitem__(self, gamma):
        return self.partials[tuple(gamma)]

    @property
    def grad(self):
        d = self.grid.dim
        return np.stack([self.partials[_unit(d, i)] for i in range(d)])

    @property
    def hess(self):
        d = self.grid.dim
        out = np.empty((d, d) + self.grid.shape)
        for i in range(d):
            for j in range(d):
                g = [0] * d
                g[i] += 1
                g[j] += 1
                out[i, j] = self.partials[tuple(g)]
        return out

    def higher(self, order):
        return {g: v for g, v in self.partials.items() if sum(g) == order}

    def magnitude(self, order):
        """Pointwise Euclidean norm of the full order-``order`` derivative tensor."""
        from math import factorial

        total = 0.0
        for g, v in self.higher(order).items():
            mult = factorial(order)
            for gi in g:
                mult //= factorial(gi)
            total = total + mult * v**2
        return np.sqrt(total)


def _unit(dim, axis):
    g = [0] * dim
    g[axis] = 1
    return tuple(g)


def derivative_values(field, gamma):
    gamma = tuple(int(g) for g in gamma)
    grid = field.grid
    if len(gamma) != grid.dim or min(gamma) < 0:
        raise ConfigError("invalid-multi-index", str(gamma))
    if sum(gamma) > MAX_ORDER:
        raise ConfigError("order-too-high", f"|gamma|={sum(gamma)} > {MAX_ORDER}")
    if sum(gamma) == 0:
        out = field.values.copy()
    else:
        out = grid.ifft(grid.derivative_symbol(gamma) * grid.fft(field.values))
    if field.background is not None:
        out = out + field.background.derivative(grid, gamma)
    return out


def spectral_derivative(field, multi_index):
    """Partial derivative ``multi_index`` of the represented function."""
    return Field(field.grid, derivative_values(field, multi_index))


def jet(field, order):
    """Every partial derivative of total order 1..order (and 0)."""
    if order > MAX_ORDER:
        raise ConfigError("order-too-high", str(order))
    grid = field.grid
    coeffs = grid.fft(field.values)
    partials = {}
    for k in range(order + 1):
        for g in multi_indices(grid.dim, k):
            vals = field.values.copy() if k == 0 else grid.ifft(grid.derivative_symbol(g) * coeffs)
            if field.background is not None:
                vals = vals + field.background.derivative(grid, g)
            partials[g] = vals
    return Jet(grid, partials)


def gradient_sup(field):
    j = jet(field, 1)
    return float(np.max(np.sqrt(np.sum(j.grad**2, axis=0))))


def ring_ratio(grid, values):
    """max |values| on the boundary ring relative to the overall max."""
    peak = float(np.max(np.abs(values)))
    if peak == 0.0:
        return 0.0
    return float(np.max(np.abs(values[grid.ring_mask()]))) / peak


def split_background(raw, background, grid, tolerance=RING_TOLERANCE):
    """Subtract ``background`` from samples ``raw``; the remainder must decay."""
    raw = np.asarray(raw, dtype=float)
    residual = raw - background.values(grid) if background is not None else raw
    ratio = ring_ratio(grid, residual)
    if ratio > tolerance:
        raise NumericalFailure(
            "residual-not-decaying", f"boundary ring ratio {ratio:.3g} > {tolerance:.3g}"
        )
    return Field(grid, residual, background)


def restrict_sup_norm(field, compact_radius, order):
    """max over |x| <= R of sum_{|gamma| <= k} |d^gamma field|."""
    grid = field.grid
    if not compact_radius < grid.half_width / 2:
        raise ConfigError("radius-exceeds-safe-region", f"R={compact_radius}")
    j = jet(field, order)
    total = sum(np.abs(v) for v in j.partials.values())
    return float(np.max(total[grid.ball_mask(compact_radius)]))


def _interp_matrix(n, half_width, points, chunk=1024):
    """Rows mapping n periodic samples on [-L, L) to trigonometric values at ``points``."""
    h = 2 * half_width / n
    k = 2 * np.pi * np.fft.fftfreq(n, h)
    k[n // 2] = np.pi / h
    # Nyquist handled by the real cosine part, so the interpolant is real.
    rows = []
    for start in range(0, points.size, chunk):
        s = points[start : start + chunk, None] + half_width
        phase = np.exp(1j * s * k[None, :])
        phase[:, n // 2] = np.cos(s[:, 0] * k[n // 2])
        rows.append(phase)
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, n))


def _interp_axis(values, half_width, points, axis):
    n = values.shape[axis]
    h = 2 * half_width / n
    offsets = (points + half_width) / h
    nearest = np.rint(offsets)
    if np.all(np.abs(offsets - nearest) < 1e-9):
        idx = np.mod(nearest.astype(int), n)
        return np.take(values, idx, axis=axis)
    coeffs = np.fft.fft(values, axis=axis) / n
    mat = _interp_matrix(n, half_width, points)
    moved = np.moveaxis(coeffs, axis, 0)
    out = np.tensordot(mat, moved, axes=(1, 0)).real
    return np.moveaxis(out, 0, axis)


def interpolate_tensor(grid, values, axis_points):
    """Trigonometric interpolation of periodic samples onto a tensor grid."""
    out = np.asarray(values, dtype=float)
    for ax, pts in enumerate(axis_points):
        out = _interp_axis(out, grid.half_width, np.asarray(pts, dtype=float), ax)
    return out


def refine(field, factor):
    """The same function on a grid ``factor`` times finer (Fourier resampling, exact background)."""
    if factor == 1:
        return field
    grid = field.grid
    fine = Grid(grid.dim, grid.points_per_axis * int(factor), grid.half_width)
    values = field.values
    for ax in range(grid.dim):
        values = signal.resample(values, fine.points_per_axis, axis=ax)
    return Field(fine, values, field.background)


def to_csv(field, path):
    grid = field.grid
    cols = [c.ravel() for c in grid.coords] + [field.full().ravel()]
    header = ",".join(["x", "y"][: grid.dim] + ["value"])
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")


def save_field(field, path):
    grid = field.grid
    header = {
        "dim": grid.dim,
        "points_per_axis": grid.points_per_axis,
        "half_width": grid.half_width,
        "background": None if field.background is None else field.background.to_dict(),
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def load_field(path):
    data = Path(path).read_bytes()
    line, _, payload = data.partition(b"\n")
    header = json.loads(line)
    grid = Grid(header["dim"], header["points_per_axis"], header["half_width"])
    values = np.frombuffer(payload, dtype="<f8").reshape(grid.shape)
    return Field(grid, values, background_from_dict(header["background"]))
