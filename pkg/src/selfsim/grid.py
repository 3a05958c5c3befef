"""Uniform periodic lattice on [-L, L)^n and its Fourier machinery."""

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Grid:
    """Uniform grid with ``points_per_axis`` nodes per axis on [-L, L)^dim."""

    dim: int
    points_per_axis: int
    half_width: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError("invalid-dimension", f"dim={self.dim}, only 1 or 2 supported")
        n = self.points_per_axis
        if n < 8 or n & (n - 1):
            raise ConfigError("non-power-of-two", f"points_per_axis={n}")
        if not self.half_width > 0:
            raise ConfigError("nonpositive-width", f"half_width={self.half_width}")

    @property
    def spacing(self):
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def shape(self):
        return (self.points_per_axis,) * self.dim

    @property
    def cell_volume(self):
        return self.spacing**self.dim

    @cached_property
    def axis(self):
        return -self.half_width + self.spacing * np.arange(self.points_per_axis)

    @cached_property
    def coords(self):
        """Tuple of coordinate arrays, each of full grid shape (ij indexing)."""
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    @cached_property
    def radius(self):
        return np.sqrt(sum(c**2 for c in self.coords))

    @cached_property
    def wavenumbers(self):
        """Per-axis angular wavenumbers, broadcastable against rfftn output."""
        n, h = self.points_per_axis, self.spacing
        ks = []
        for ax in range(self.dim):
            if ax == self.dim - 1:
                k = 2 * np.pi * np.fft.rfftfreq(n, h)
            else:
                k = 2 * np.pi * np.fft.fftfreq(n, h)
            shape = [1] * self.dim
            shape[ax] = k.size
            ks.append(k.reshape(shape))
        return tuple(ks)

    @cached_property
    def k_squared(self):
        return sum(k**2 for k in self.wavenumbers)

    @cached_property
    def dealias_mask(self):
        """2/3-rule truncation mask on the rfftn layout."""
        kmax = np.pi / self.spacing
        mask = np.ones(self.spectral_shape, dtype=bool)
        for k in self.wavenumbers:
            mask = mask & (np.abs(k) < (2.0 / 3.0) * kmax)
        return mask

    @property
    def spectral_shape(self):
        return self.shape[:-1] + (self.points_per_axis // 2 + 1,)

    def fft(self, values):
        return np.fft.rfftn(values)

    def ifft(self, coeffs):
        return np.fft.irfftn(coeffs, s=self.shape, axes=tuple(range(-self.dim, 0)))

    def derivative_symbol(self, gamma):
        """Fourier symbol of the partial derivative with multi-index ``gamma``.

        Odd-order derivatives drop the Nyquist mode along that axis so real
        data stays real and parity is preserved.
        """
        symbol = np.ones(self.spectral_shape, dtype=complex)
        n = self.points_per_axis
        for ax, order in enumerate(gamma):
            if order == 0:
                continue
            k = (1j * self.wavenumbers[ax]) ** order
            if order % 2:
                k = k.copy()
                idx = [0] * self.dim
                idx[ax] = n // 2
                k[tuple(idx)] = 0.0
            symbol = symbol * k
        return symbol

    def operator_symbol(self, order):
        """Symbol of A: |k|^2 for A = -Laplacian, |k|^4 for A = bilaplacian."""
        return self.k_squared ** (order // 2)

    def ring_mask(self, fraction=1.0 / 16.0):
        """Nodes in the outer boundary ring (at least two cells thick)."""
        width = max(fraction * self.half_width, 2 * self.spacing)
        edge = np.max(np.abs(np.stack(self.coords)), axis=0)
        return edge >= self.half_width - width

    def ball_mask(self, radius):
        return self.radius <= radius + 1e-12


def make_grid(dim, points_per_axis, half_width):
    return Grid(int(dim), int(points_per_axis), float(half_width))


def multi_indices(dim, order):
    """All multi-indices of total ``order`` in ``dim`` variables."""
    return [g for g in product(range(order + 1), repeat=dim) if sum(g) == order]


def unit_index(dim, axis, order=1):
    g = [0] * dim
    g[axis] = order
    return tuple(g)
