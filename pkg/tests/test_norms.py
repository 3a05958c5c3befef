import numpy as np
import pytest

from selfsim.backgrounds import affine
from selfsim.errors import ConfigError
from selfsim.fields import Field, jet
from selfsim.flows import make_flow
from selfsim.grid import make_grid
from selfsim.norms import (
    NormReport,
    NormSpec,
    contraction_witness,
    exponent_table,
    rescale_trajectory,
    weighted_lipschitz,
    weighted_norms,
    xt_norm,
)
from selfsim.semigroup import Trajectory, default_snapshots, integrate
from selfsim.similarity import ConeData, make_perturbation, make_self_similar_data

MCF, WF = make_flow("MCF"), make_flow("WF")


def _static(g, field, T, flow=MCF):
    times = default_snapshots(g, flow.alpha, T)
    return Trajectory(flow, np.r_[0.0, times], (field,) * (times.size + 1), np.zeros(times.size + 1))


@pytest.fixture(scope="module")
def mcf_run():
    g = make_grid(1, 2048, 64)
    u0 = Field(g, 0.2 * np.exp(-(g.axis**2) / 4))
    return integrate(u0, MCF, 16.0, epsilon=0.5)


# exponent table
def test_exponent_table():
    assert exponent_table("MCF", 1, "XT") == (5, 2 / 5, 2)
    assert exponent_table("MCF", 2, "XT_beta") == (6, 2 / 6, 2)
    assert exponent_table("WF", 1, "XT") == (7, 2 / 7, 4)
    assert exponent_table("SD", 2, "XT") == (8, 2 / 8, 4)
    assert exponent_table("WF", 1, "Yl_beta", 0) == (7 / 3, 6 / 7, 4)
    assert exponent_table("WF", 1, "Yl_beta", 1) == (7 / 2, 4 / 7, 4)
    assert exponent_table("WF", 1, "Yl_beta", 2) == (7, 2 / 7, 4)
    with pytest.raises(ConfigError):
        exponent_table("MCF", 1, "Yl_beta", 0)
    with pytest.raises(ConfigError):
        NormSpec("XT", MCF, beta=-1.0)
    with pytest.raises(ConfigError):
        NormSpec("ZT", MCF)


# weighted_lipschitz
def test_weighted_lipschitz_beta_zero_is_twice_sup():
    g = make_grid(1, 256, 16)
    p = Field(g, 0.1 * np.sin(np.pi * g.axis / 8))
    grad = np.max(np.abs(jet(p, 1).grad))
    assert weighted_lipschitz(p, 0.0) == pytest.approx(2 * grad, rel=1e-14)


def test_weighted_lipschitz_by_construction():
    g = make_grid(1, 512, 32)
    p, _ = make_perturbation("decay-tail", {"amplitude": 1.0, "beta": 2.0}, g, epsilon=2.0)
    assert weighted_lipschitz(p, 2.0) == pytest.approx(1.0, abs=1e-12)


def test_weighted_lipschitz_shifted_cone():
    g = make_grid(1, 1024, 32)
    cone = ConeData.even(0.2, smoothing="sqrt")
    p, _ = make_perturbation("shift", {"shift": (0.5,)}, g, cone=cone, epsilon=0.5)
    # weight 2 at beta = 0; plain sup of grad p is at most 2 |grad v0|
    assert weighted_lipschitz(p, 0.0) / 2 <= 2 * 0.2 + 1e-12


# xt_norm examples
def test_plane_trajectory_norm():
    g = make_grid(1, 128, 8)
    u0 = Field(g, np.zeros(g.shape), affine([0.3]))
    tr = integrate(u0, MCF, 1.0, epsilon=0.5)
    rep = xt_norm(tr, 1.0, NormSpec("XT", MCF))
    assert rep.sup_part == pytest.approx(0.3, abs=1e-14)
    assert rep.cylinder_part <= 1e-12
    assert rep.total == rep.sup_part + rep.cylinder_part


def test_heat_of_cone_norm_bounded_under_refinement():
    ratios = []
    for n in (256, 512, 1024):
        g = make_grid(1, n, 16)
        v0 = make_self_similar_data(ConeData.even(0.2), g, flow=MCF)
        tr = integrate(v0, MCF, 4.0, linear_only=True)
        ratios.append(xt_norm(tr, 4.0, NormSpec("XT", MCF)).total / 0.2)
    assert np.all(np.isfinite(ratios))
    assert max(ratios) / min(ratios) - 1 <= 1e-6


def test_doubling_identity(mcf_run):
    lam = 2.0
    a = xt_norm(rescale_trajectory(mcf_run, lam), 4.0, NormSpec("XT", MCF))
    b = xt_norm(mcf_run, lam**2 * 4.0, NormSpec("XT", MCF))
    assert abs(a.total / b.total - 1) <= 0.03
    ra, rb = a.argmax["cylinder"]["R"], b.argmax["cylinder"]["R"]
    assert abs(np.log2(lam * ra / rb)) <= 1
    assert abs(lam * a.argmax["cylinder"]["x"][0] - b.argmax["cylinder"]["x"][0]) <= rb


def test_monotone_in_T(mcf_run):
    totals = [xt_norm(mcf_run, T, NormSpec("XT", MCF)).total for T in (1.0, 4.0, 16.0)]
    assert totals[0] <= totals[1] <= totals[2]


def test_smallness_persistence(mcf_run):
    rep = xt_norm(mcf_run, 16.0, NormSpec("XT", MCF))
    assert rep.total <= 5 * mcf_run.lipschitz_history[0]


def test_insufficient_snapshots():
    g = make_grid(1, 128, 8)
    tr = integrate(Field(g, 0.1 * np.exp(-(g.axis**2))), MCF, 1.0, snapshots=[0.5, 1.0])
    with pytest.raises(ConfigError) as exc:
        xt_norm(tr, 1.0, NormSpec("XT", MCF))
    assert exc.value.reason == "insufficient-snapshots"


# weighted norms
def test_beta_zero_is_exactly_twice(mcf_run):
    plain = xt_norm(mcf_run, 4.0, NormSpec("XT", MCF))
    w0 = weighted_norms(mcf_run, 4.0, NormSpec("XT_beta", MCF, 0.0))
    assert w0.sup_part == 2 * plain.sup_part
    assert w0.cylinder_part == 2 * plain.cylinder_part


def test_weight_scales_like_distance_power():
    g = make_grid(1, 2048, 256)
    plain, weighted = {}, {}
    Ds = (8.0, 16.0, 32.0, 64.0)
    for D in Ds:
        tr = _static(g, Field(g, 0.05 * np.exp(-((g.axis - D) ** 2))), 4.0)
        plain[D] = xt_norm(tr, 4.0, NormSpec("XT", MCF)).cylinder_part
        weighted[D] = [weighted_norms(tr, 4.0, NormSpec("XT_beta", MCF, b)).cylinder_part for b in (0.0, 1.0, 2.0)]
    for D in Ds:
        w = weighted[D]
        assert w[0] <= w[1] <= w[2]
        ratio = w[2] / (plain[D] * (1 + D**2))
        assert 1 - 1e-9 <= ratio <= 1.25
    slope = np.log(weighted[64.0][2] / weighted[32.0][2]) / np.log(2)
    assert slope == pytest.approx(2.0, rel=0.05)


def test_y_norm_requires_source(mcf_run):
    with pytest.raises(ConfigError):
        weighted_norms(mcf_run, 4.0, NormSpec("YT_beta", MCF, 1.0))


def test_report_parts_nonnegative(mcf_run):
    rep = weighted_norms(mcf_run, 4.0, NormSpec("XT_beta", MCF, 1.0))
    assert isinstance(rep, NormReport)
    assert rep.sup_part >= 0 and rep.cylinder_part >= 0
    d = rep.as_dict()
    assert d["total"] == d["sup_part"] + d["cylinder_part"]


@pytest.mark.parametrize("flow, T", [(MCF, 1.0), (WF, 1.0)])
def test_contraction_witness_finite(flow, T):
    g = make_grid(1, 512, 32)
    u = integrate(Field(g, 0.1 * np.exp(-(g.axis**2) / 4)), flow, T, epsilon=0.5)
    v = integrate(Field(g, 0.12 * np.exp(-(g.axis**2) / 4)), flow, T, snapshots=u.times[1:], epsilon=0.5)
    w = contraction_witness(u, v, T, 1.0)
    assert np.isfinite(w["fitted_C"]) and w["fitted_C"] > 0
    assert w["Y_difference"] <= w["fitted_C"] * (w["X_u"] ** w["power"] + w["X_v"] ** w["power"]) * w["X_beta_difference"] * (1 + 1e-12)
