import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from selfsim.backgrounds import EvolvedCone, ExprBackground, SYMBOLS, affine
from selfsim.errors import ConfigError, NumericalFailure
from selfsim.fields import (
    Field,
    derivative_values,
    jet,
    load_field,
    restrict_sup_norm,
    save_field,
    spectral_derivative,
    split_background,
    to_csv,
)
from selfsim.grid import make_grid
from selfsim.similarity import ConeData


# make_grid examples
def test_grid_1d_spacing():
    g = make_grid(1, 256, 16)
    assert g.spacing == 0.125
    assert g.shape == (256,)
    assert g.axis[0] == -16 and np.isclose(g.axis[-1], 16 - 0.125)


def test_grid_2d_shape_and_spacing():
    g = make_grid(2, 64, 8)
    assert g.shape == (64, 64)
    assert g.spacing == 0.25


@pytest.mark.parametrize(
    "args, reason",
    [((3, 64, 8), "invalid-dimension"), ((1, 100, 8), "non-power-of-two"), ((1, 4, 8), "non-power-of-two"), ((1, 64, 0), "nonpositive-width")],
)
def test_grid_contract_errors(args, reason):
    with pytest.raises(ConfigError) as exc:
        make_grid(*args)
    assert exc.value.reason == reason


@given(st.sampled_from([1, 2]), st.integers(3, 10), st.floats(0.5, 100))
def test_grid_spacing_identity(dim, log_n, L):
    n = 2**log_n
    g = make_grid(dim, n, L)
    assert g.spacing * n == pytest.approx(2 * L, rel=0, abs=1e-12 * L)


# spectral_derivative examples
def test_plane_background_gradient():
    g = make_grid(1, 128, 8)
    u = Field(g, np.zeros(g.shape), affine([0.3]))
    assert np.allclose(spectral_derivative(u, (1,)).values, 0.3, atol=1e-14)


@pytest.mark.parametrize("k", [1, 3, 7])
def test_sine_second_derivative(k):
    g = make_grid(1, 256, np.pi)
    x = g.axis
    u = Field(g, np.sin(k * x))
    err = np.max(np.abs(spectral_derivative(u, (2,)).values + k**2 * np.sin(k * x)))
    assert err <= 1e-10


def test_smoothed_cone_derivative_matches_closed_form():
    g = make_grid(1, 1024, 32)
    cone = ConeData.even(0.2, smoothing="sqrt")
    bg = cone.background(g)
    u = Field(g, np.zeros(g.shape), bg)
    delta = cone.delta(g)
    x = g.axis
    exact = 0.2 * x / np.sqrt(x**2 + delta**2)
    assert np.max(np.abs(derivative_values(u, (1,)) - exact)) <= 1e-12
    assert abs(derivative_values(u, (1,))[-1] - 0.2) < 1e-4
    assert abs(derivative_values(u, (1,))[0] + 0.2) < 1e-4


def test_order_too_high():
    g = make_grid(1, 64, 4)
    with pytest.raises(ConfigError) as exc:
        spectral_derivative(Field(g, np.zeros(g.shape)), (5,))
    assert exc.value.reason == "order-too-high"


def test_exact_cone_corner_not_differentiable():
    g = make_grid(1, 64, 4)
    u = Field(g, np.zeros(g.shape), EvolvedCone(0.2, 0.2, tau=0.0))
    with pytest.raises(NumericalFailure) as exc:
        derivative_values(u, (2,))
    assert exc.value.reason == "background-not-differentiable"


def test_constant_field_derivative_zero():
    g = make_grid(2, 32, 4)
    u = Field(g, np.full(g.shape, 3.7))
    for gamma in [(1, 0), (0, 1), (2, 0), (1, 1)]:
        assert np.max(np.abs(derivative_values(u, gamma))) <= 1e-12


def test_mixed_partials_commute():
    g = make_grid(2, 64, np.pi)
    x, y = g.coords
    u = Field(g, np.sin(2 * x) * np.cos(3 * y) + np.cos(x + y))
    j = jet(u, 2)
    assert j.hess.shape == (2, 2, 64, 64)
    assert np.array_equal(j.hess[0, 1], j.hess[1, 0])
    d12 = spectral_derivative(spectral_derivative(u, (1, 0)), (0, 1)).values
    d21 = spectral_derivative(spectral_derivative(u, (0, 1)), (1, 0)).values
    assert np.max(np.abs(d12 - d21)) <= 1e-10


def test_spectral_convergence_rate():
    errs = []
    for n in (16, 32, 64):
        g = make_grid(1, n, np.pi)
        x = g.axis
        f = np.exp(np.sin(x))
        d = spectral_derivative(Field(g, f), (1,)).values
        errs.append(np.max(np.abs(d - np.cos(x) * f)))
    assert errs[0] / errs[1] >= 1e3
    assert errs[2] < 1e-12


# split_background examples
def _cone_bg(g):
    return ExprBackground(0.2 * (SYMBOLS[0] ** 2 + 0.25) ** 0.5, 1, "cone")


def test_split_exact_cone_zero_residual():
    g = make_grid(1, 256, 16)
    bg = _cone_bg(g)
    f = split_background(bg.values(g), bg, g)
    assert np.all(f.values == 0)


def test_split_cone_plus_bump():
    g = make_grid(1, 256, 16)
    bg = _cone_bg(g)
    bump = 0.1 * np.exp(-g.axis**2)
    f = split_background(bg.values(g) + bump, bg, g)
    assert np.max(np.abs(f.values - bump)) <= 1e-12


def test_split_shift_bounded_by_slope_times_shift():
    g = make_grid(1, 256, 16)
    m, a = 0.2, 0.7
    raw = m * np.abs(g.axis - a)
    bg = ExprBackground(m * abs(SYMBOLS[0]), 1, "cone")
    residual = raw - bg.values(g)
    assert np.max(np.abs(residual)) <= m * a + 1e-14
    with pytest.raises(NumericalFailure) as exc:
        split_background(raw, bg, g)
    assert exc.value.reason == "residual-not-decaying"


def test_split_roundtrip_identity():
    g = make_grid(1, 128, 8)
    bg = _cone_bg(g)
    raw = bg.values(g) + 1e-3 * np.exp(-(g.axis**2))
    f = split_background(raw, bg, g)
    assert np.max(np.abs(f.full() - raw)) <= 1e-13


# restrict_sup_norm examples
def test_restrict_zero_field():
    g = make_grid(1, 128, 8)
    assert restrict_sup_norm(Field(g, np.zeros(g.shape)), 2.0, 2) == 0.0


def test_restrict_linear_field():
    g = make_grid(1, 128, 8)
    u = Field(g, np.zeros(g.shape), affine([1.0]))
    assert restrict_sup_norm(u, 1.0, 1) == pytest.approx(2.0, abs=1e-12)


def test_restrict_shifted_cone_difference():
    g = make_grid(1, 1024, 32)
    m, a = 0.2, 0.5
    cone = ConeData.even(m, smoothing="sqrt")
    u = Field(g, np.zeros(g.shape), cone.background(g))
    v = Field(g, np.zeros(g.shape), cone.background(g, center=np.array([a])))
    diff = Field(g, u.full() - v.full())
    brute = np.max(np.abs(diff.values[g.ball_mask(4.0)]))
    value = restrict_sup_norm(diff, 4.0, 0)
    assert value == pytest.approx(brute, rel=1e-12)
    assert 0 <= value <= m * a + 1e-12


def test_restrict_radius_guard():
    g = make_grid(1, 64, 8)
    with pytest.raises(ConfigError) as exc:
        restrict_sup_norm(Field(g, np.zeros(g.shape)), 4.0, 0)
    assert exc.value.reason == "radius-exceeds-safe-region"


# Field invariants and serialization
def test_field_rejects_nonfinite():
    g = make_grid(1, 16, 1)
    vals = np.zeros(16)
    vals[3] = np.nan
    with pytest.raises(NumericalFailure) as exc:
        Field(g, vals)
    assert exc.value.reason == "non-finite-values"


def test_field_immutable():
    g = make_grid(1, 16, 1)
    f = Field(g, np.zeros(16))
    with pytest.raises(ValueError):
        f.values[0] = 1.0


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(0.01, 0.3))
def test_field_serialization_roundtrip(tmp_path_factory, center, m):
    g = make_grid(1, 64, 8)
    cone = ConeData.even(m, smoothing="sqrt")
    f = Field(g, np.exp(-g.axis**2), cone.background(g, center=np.array([center])))
    path = tmp_path_factory.mktemp("io") / "u.field"
    save_field(f, path)
    raw = path.read_bytes()
    header, _, payload = raw.partition(b"\n")
    assert len(payload) == 64 * 8
    back = load_field(path)
    assert back.grid == g
    assert np.array_equal(back.values, f.values)
    assert np.allclose(back.full(), f.full(), atol=1e-15)


def test_csv_export(tmp_path):
    g = make_grid(2, 8, 1)
    f = Field(g, np.arange(64.0).reshape(8, 8))
    to_csv(f, tmp_path / "f.csv")
    data = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)
    assert data.shape == (64, 3)
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "x,y,value"
