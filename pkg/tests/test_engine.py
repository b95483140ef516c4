"""Finite-portfolio density engine: frozen oracle values, internal
consistency, and agreement with simulation at statistical tolerance."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from portloss import (
    MarketParams,
    McConfig,
    MultiMarketParams,
    NoSubScenario,
    OverlapSpec,
    ParameterError,
    QuadratureSpec,
    SingularCovarianceError,
    SubordinatedScenario,
    SubordinationSpec,
    UndefinedCorrelationError,
    density_grid_nosub,
    density_grid_subordinated,
    density_nosub,
    density_nosub_multimarket,
    density_subordinated,
    loss_correlation,
    marginal_density,
    mass_accounting,
    no_default_probability,
    nosub_cell_masses,
    subordinated_cell_masses,
    tail_probability,
)
from portloss import mc
from portloss.engine import alphas, gaussian_moment_terms


def _mk(c, market):
    return MarketParams(mu=market.mu, rho=market.rho, c=c,
                        n_fluct=market.n_fluct, t_mat=market.t_mat, v0=market.v0)


# ---------------------------------------------------------------------------
# no-default probability

def test_no_default_frozen_values(market):
    assert no_default_probability(50, 75.0, market) == pytest.approx(
        0.21122016781017616, rel=1e-12)
    assert no_default_probability(1, 75.0, market) == pytest.approx(
        0.8847074179250195, rel=1e-12)


def test_no_default_single_firm_is_complement_of_default_moment(market, quad):
    # K = 1 reduces to 1 - E[m0]; the mixture and the moment must agree
    from portloss.moments import moment_plain
    from portloss.quadrature import chi2_nodes, gauss_nodes

    z, wz = chi2_nodes(market.n_fluct, quad.z_nodes)
    u, wu = gauss_nodes(market.n_fluct, quad.u_nodes)
    m0 = moment_plain(0, z[:, None], u[None, :], 75.0, market)
    want = 1.0 - float(wz @ m0 @ wu)
    assert no_default_probability(1, 75.0, market) == pytest.approx(want, rel=1e-12)


def test_no_default_decreases_with_size_and_face(market):
    vals = [no_default_probability(k, 75.0, market) for k in (1, 2, 5, 20, 100)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert no_default_probability(10, 60.0, market) > no_default_probability(10, 75.0, market)


def test_no_default_multimarket_matches_singleton_block(market):
    mm = MultiMarketParams(blocks=((market, 30),))
    got = no_default_probability(30, 75.0, mm)
    want = no_default_probability(30, 75.0, market)
    assert got == pytest.approx(want, rel=1e-10)
    with pytest.raises(ParameterError):
        no_default_probability(10, 75.0, MultiMarketParams(blocks=((market, 30),)))


# ---------------------------------------------------------------------------
# overlap weights

def test_alphas_for_standard_layouts(halves):
    assert alphas(halves) == pytest.approx((2.0, 0.0, 2.0))
    # identical portfolios: both own every obligor's face half each
    same = OverlapSpec(r1=0.0, r12=1.0, gamma=0.5, f0=75.0)
    a1, a12, a2 = alphas(same)
    assert a1 == pytest.approx(a12) and a12 == pytest.approx(a2)


def test_identical_portfolios_have_no_bivariate_density(market):
    same = OverlapSpec(r1=0.0, r12=1.0, gamma=0.5, f0=75.0)
    sc = NoSubScenario(k_obligors=50, params=market, overlap=same)
    with pytest.raises(SingularCovarianceError):
        density_nosub((0.1, 0.1), sc)
    # the correlation is still defined, and is exactly 1
    assert loss_correlation(sc, method="analytic") == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# loss correlation

def test_correlation_frozen_values(market, market_c0, halves):
    cases = [
        (market_c0, 100, 0.7162315461874394),
        (market, 100, 0.9207348155333518),
        (market_c0, 10, 0.20153304951371245),
        (market, 10, 0.5373771355415867),
    ]
    for par, k, want in cases:
        sc = NoSubScenario(k_obligors=k, params=par, overlap=halves)
        assert loss_correlation(sc, method="analytic") == pytest.approx(want, rel=1e-10)


def test_correlation_increases_with_c_and_k(market, halves):
    cs = [0.0, 0.2, 0.4, 0.6, 0.8]
    vals = [
        loss_correlation(
            NoSubScenario(k_obligors=100, params=_mk(c, market), overlap=halves),
            method="analytic",
        )
        for c in cs
    ]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    small = loss_correlation(
        NoSubScenario(k_obligors=10, params=market, overlap=halves), method="analytic")
    big = loss_correlation(
        NoSubScenario(k_obligors=100, params=market, overlap=halves), method="analytic")
    assert big > small


def test_correlation_mc_agrees_with_analytic(market, halves):
    sc = NoSubScenario(k_obligors=100, params=market, overlap=halves)
    run = mc.estimate(sc, McConfig(n_samples=200_000, rng_seed=3))
    want = loss_correlation(sc, method="analytic")
    assert abs(run.corr - want) < 4.0 * run.corr_se


def test_correlation_undefined_for_riskless_faces(market):
    # face so small nobody can default at working precision
    ov = OverlapSpec(r1=0.5, r12=0.0, gamma=0.5, f0=1e-60)
    sc = NoSubScenario(k_obligors=10, params=market, overlap=ov)
    with pytest.raises(UndefinedCorrelationError):
        loss_correlation(sc, method="analytic")
    with pytest.raises(ParameterError):
        loss_correlation(sc, method="bootstrap")


def test_correlation_subordinated_positive(market, faces):
    sc = SubordinatedScenario(k_obligors=200, tranches=faces, params=market)
    r = loss_correlation(sc, method="analytic")
    assert 0.0 < r < 1.0


# ---------------------------------------------------------------------------
# subordinated density

def test_subordinated_masses_normalize(market, faces, quad):
    sc = SubordinatedScenario(k_obligors=200, tranches=faces, params=market)
    edges = np.array([-np.inf, 0.02, 0.1, 0.5, np.inf])
    m = subordinated_cell_masses(sc, edges, edges, quad)
    assert m.shape == (4, 4)
    assert np.all(m >= -1e-12)
    assert m.sum() == pytest.approx(1.0, abs=1e-9)


def test_subordinated_density_matches_cell_mass(market, faces, quad):
    # integrate the pointwise density over one smooth cell by midpoint
    # refinement and compare with the closed-form cell mass
    # cell in the bulk, wide relative to the conditional slice width, so
    # the midpoint rule resolves the integrand
    sc = SubordinatedScenario(k_obligors=200, tranches=faces, params=market)
    lo_s, hi_s, lo_j, hi_j = 0.004, 0.008, 0.09, 0.11
    mass = subordinated_cell_masses(
        sc, np.array([lo_s, hi_s]), np.array([lo_j, hi_j]), quad)[0, 0]
    n = 24
    xs = lo_s + (np.arange(n) + 0.5) * (hi_s - lo_s) / n
    ys = lo_j + (np.arange(n) + 0.5) * (hi_j - lo_j) / n
    vals = [density_subordinated(x, y, sc, quad) for x in xs for y in ys]
    approx = np.mean(vals) * (hi_s - lo_s) * (hi_j - lo_j)
    assert approx == pytest.approx(mass, rel=1e-2)


def test_subordinated_grid_matches_points(market, faces, quad):
    sc = SubordinatedScenario(k_obligors=100, tranches=faces, params=market)
    grid = density_grid_subordinated(sc, n_cells=10, lo=0.0, hi=0.5, quad=quad)
    xs, ys = grid.axes
    for i in (2, 5):
        for j in (3, 7):
            want = density_subordinated(float(xs[i]), float(ys[j]), sc, quad)
            assert grid.values[i, j] == pytest.approx(want, rel=1e-9)


def test_conditional_junior_dominates_senior(market, faces):
    # the junior tranche absorbs losses first, so its conditional mean
    # loss fraction is at least the senior one everywhere
    for z in (0.5, 1.0, 4.0, 10.0):
        for u in (-0.5, 0.0, 0.8):
            t = gaussian_moment_terms(z, u, SubordinatedScenario(
                k_obligors=100, tranches=faces, params=market))
            assert float(t.mean_junior) >= float(t.mean_senior) - 1e-15


def test_adaptive_and_fixed_density_agree(market, faces):
    sc = SubordinatedScenario(k_obligors=200, tranches=faces, params=market)
    # bulk point: the default fixed rule is converged there
    fixed = density_subordinated(0.005, 0.1, sc, QuadratureSpec())
    adaptive = density_subordinated(
        0.005, 0.1, sc, QuadratureSpec(mode="adaptive", rel_tol=1e-6))
    assert adaptive == pytest.approx(fixed, rel=1e-3)
    # tail point: judge adaptive against a refined fixed rule instead
    fine = density_subordinated(0.02, 0.1, sc, QuadratureSpec(z_nodes=160, u_nodes=160))
    adaptive_tail = density_subordinated(
        0.02, 0.1, sc, QuadratureSpec(mode="adaptive", rel_tol=1e-7))
    assert adaptive_tail == pytest.approx(fine, rel=2e-3)


def test_marginal_integrates_to_window_mass(market, faces, quad):
    # smooth window away from the origin smear: midpoint integral of the
    # marginal equals the exact mixture mass of that junior-loss window
    sc = SubordinatedScenario(k_obligors=200, tranches=faces, params=market)
    grid = marginal_density("junior", sc, quad, n_cells=900, lo=0.05, hi=0.5)
    step = grid.axes[0][1] - grid.axes[0][0]
    total = float(grid.values.sum() * step)
    want = subordinated_cell_masses(
        sc, np.array([-np.inf, np.inf]), np.array([0.05, 0.5]), quad)[0, 0]
    assert total == pytest.approx(float(want), rel=1e-4)
    with pytest.raises(ParameterError):
        marginal_density("mezzanine", sc, quad)


# ---------------------------------------------------------------------------
# untranched density

def test_nosub_masses_normalize_1d_and_2d(market, halves, quad):
    one = NoSubScenario(k_obligors=50, params=market, face=75.0)
    e = np.array([-np.inf, 0.05, 0.2, np.inf])
    assert nosub_cell_masses(one, e, quad=quad).sum() == pytest.approx(1.0, abs=1e-9)
    two = NoSubScenario(k_obligors=50, params=market, overlap=halves)
    assert nosub_cell_masses(two, e, e, quad=quad).sum() == pytest.approx(1.0, abs=1e-9)


def test_mass_accounting_close_for_large_pools(market, halves):
    sc = NoSubScenario(k_obligors=100, params=market, overlap=halves)
    run = mc.estimate(sc, McConfig(n_samples=100_000, rng_seed=7, n_bins=50))
    audit = mass_accounting(sc, n_cells=50,
                            mc_origin_excess_mass=run.origin_excess_mass(50))
    assert audit["abs_error"] < 0.02
    sub = SubordinatedScenario(
        k_obligors=200, tranches=SubordinationSpec(37.0, 38.0), params=market)
    run2 = mc.estimate(sub, McConfig(n_samples=100_000, rng_seed=7, n_bins=50))
    audit2 = mass_accounting(sub, n_cells=50,
                             mc_origin_excess_mass=run2.origin_excess_mass(50))
    assert audit2["abs_error"] < 0.02


def test_nosub_grid_matches_points(market, halves, quad):
    sc = NoSubScenario(k_obligors=100, params=market, overlap=halves)
    grid = density_grid_nosub(sc, n_cells=8, lo=0.0, hi=0.4, quad=quad)
    xs, ys = grid.axes
    want = density_nosub((float(xs[3]), float(ys[5])), sc, quad)
    assert grid.values[3, 5] == pytest.approx(want, rel=1e-9)


def test_nosub_single_creditor_grid_is_univariate(market, quad):
    sc = NoSubScenario(k_obligors=50, params=market, face=75.0)
    grid = density_grid_nosub(sc, n_cells=30, lo=0.0, hi=0.6, quad=quad)
    assert grid.values.shape == (30,)
    mid = density_nosub(float(grid.axes[0][10]), sc, quad)
    assert grid.values[10] == pytest.approx(mid, rel=1e-9)


def test_heterogeneous_faces_layout(market, quad):
    # creditor one holds the first three firms, creditor two the other two,
    # with unequal faces
    faces = ((40.0, 40.0, 40.0, 0.0, 0.0), (0.0, 0.0, 0.0, 60.0, 80.0))
    sc = NoSubScenario(k_obligors=5, params=market, faces=faces)
    assert sc.n_creditors == 2
    assert sc.obligor_face is None  # totals differ across firms
    val = density_nosub((0.2, 0.2), sc, quad)
    assert val >= 0.0


def test_tail_probability_against_mc(market):
    sc = NoSubScenario(k_obligors=50, params=market, face=75.0)
    p = tail_probability(0.1, sc)
    run = mc.estimate(sc, McConfig(n_samples=200_000, rng_seed=11))
    est = run.tails[0.1][0]
    se = np.sqrt(est * (1.0 - est) / run.n)
    # statistical band plus a small allowance for the smoothed tail edge
    assert abs(est - p) < 3.0 * se + 2e-3


def test_multimarket_total_density_normalizes(market, quad):
    mm = MultiMarketParams(blocks=((market, 20), (market, 20)))
    sc = NoSubScenario(k_obligors=40, params=mm, face=75.0, creditors=1)
    xs = np.linspace(1e-3, 0.999, 400)
    vals = np.array([density_nosub_multimarket(float(x), sc, quad) for x in xs])
    total = float(np.trapezoid(vals, xs)) + no_default_probability(40, 75.0, mm)
    assert total == pytest.approx(1.0, abs=0.02)
    with pytest.raises(ParameterError):
        density_nosub_multimarket(0.1, NoSubScenario(k_obligors=5, params=market, face=75.0))
    with pytest.raises(ParameterError):
        density_nosub((0.1,), sc)


@given(st.integers(2, 12))
def test_small_pool_warning_flag(k):
    par = MarketParams(mu=0.17, rho=0.35, c=0.28, n_fluct=6, t_mat=1.0, v0=100.0)
    sc = NoSubScenario(k_obligors=k, params=par, face=75.0)
    assert sc.accuracy_warning == (k < 8)
