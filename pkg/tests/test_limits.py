"""Infinite-portfolio limit densities: root solving, frozen points, and
consistency between grid builders and the pointwise functions."""

import math

import numpy as np
import pytest

from portloss import (
    MarketParams,
    NoRootError,
    ParameterError,
    QuadratureSpec,
    SubordinationSpec,
    density_limit_equal_infinite,
    density_limit_finite_vs_infinite,
    density_limit_subordinated,
    density_limit_two_markets,
    limit_curve_equal_infinite,
    limit_grid_finite_vs_infinite,
    limit_grid_subordinated,
    limit_grid_two_markets,
)
from portloss.limits import (
    newton_bisect,
    solve_u_junior,
    solve_u_plain,
    solve_u_senior,
    solve_z0,
)
from portloss.moments import moment_plain, moment_senior

# points on the ridge where senior and junior losses co-move, frozen from a
# fine scan of the pointwise function
RIDGE_POINTS = {
    (0.0062, 0.3): 9.18467316367283,
    (0.0155, 0.4): 1.557831040079727,
    (0.0313, 0.5): 0.3036546692799409,
    (0.0566, 0.6): 0.05936685316640431,
}


def test_newton_bisect_cubic():
    f = lambda x: x**3 - 2.0
    df = lambda x: 3.0 * x**2
    root, iters = newton_bisect(f, df, 0.0, 4.0)
    assert root == pytest.approx(2.0 ** (1.0 / 3.0), rel=1e-12)
    assert iters < 60
    # stays inside the bracket even when newton steps want to escape
    root2, _ = newton_bisect(lambda x: math.tanh(20 * (x - 0.3)),
                          lambda x: 20 / math.cosh(20 * (x - 0.3)) ** 2, 0.0, 1.0)
    assert root2 == pytest.approx(0.3, abs=1e-10)
    with pytest.raises(NoRootError):
        newton_bisect(f, df, 3.0, 4.0)


def test_solve_u_plain_inverts_the_mean(market):
    z = 2.0
    sol = solve_u_plain(0.25, z, 75.0, market)
    got = float(moment_plain(1, z, sol.u, 75.0, market))
    assert got == pytest.approx(0.25, abs=1e-10)


def test_solve_u_senior_junior_invert(market, faces):
    # targets chosen inside the reachable range at this scale (the senior
    # mean tops out near 0.058 at z = 1.5)
    z = 1.5
    s = solve_u_senior(0.02, z, faces, market)
    assert float(moment_senior(1, z, s.u, faces, market)) == pytest.approx(0.02, abs=1e-10)
    j = solve_u_junior(0.4, z, faces, market)
    from portloss.moments import junior_mean_target

    assert float(junior_mean_target(z, j.u, faces, market)) == pytest.approx(0.4, abs=1e-10)
    with pytest.raises(NoRootError):
        solve_u_senior(0.1, z, faces, market)


def test_solve_u_out_of_range_raises(market):
    with pytest.raises(NoRootError):
        solve_u_plain(1.5, 1.0, 75.0, market)


def test_limit_subordinated_frozen_ridge(market, faces):
    for (ls, lj), want in RIDGE_POINTS.items():
        got = density_limit_subordinated(ls, lj, faces, market)
        assert got == pytest.approx(want, rel=1e-9)


def test_limit_subordinated_off_ridge_is_zero(market, faces):
    # senior loss far above what any scale supports at this junior loss
    assert density_limit_subordinated(0.5, 0.1, faces, market) == 0.0


def test_solve_z0_locates_the_crossing(market, faces):
    sol = solve_z0(0.0155, 0.4, faces, market)
    s = solve_u_senior(0.0155, sol.z0, faces, market)
    j = solve_u_junior(0.4, sol.z0, faces, market)
    assert s.u == pytest.approx(j.u, abs=1e-8)


def test_limit_grid_subordinated_matches_points(market, faces):
    grid = limit_grid_subordinated(faces, market, n_cells=12, lo=0.0, hi=0.6)
    xs, ys = grid.axes
    checked = 0
    for i in range(12):
        for j in range(12):
            if grid.values[i, j] > 0:
                want = density_limit_subordinated(float(xs[i]), float(ys[j]), faces, market)
                assert grid.values[i, j] == pytest.approx(want, rel=1e-9)
                checked += 1
    assert checked >= 5


def test_limit_equal_infinite_frozen(market):
    got = density_limit_equal_infinite(0.3, 75.0, market)
    assert got == pytest.approx(0.009084694610398904, rel=1e-10)
    with pytest.raises(ParameterError):
        density_limit_equal_infinite(0.0, 75.0, market)
    with pytest.raises(ParameterError):
        density_limit_equal_infinite(1.0, 75.0, market)


def test_limit_equal_density_matches_direct_simulation(market):
    # the infinite-portfolio loss is the conditional mean loss m1(z, u);
    # its window probabilities can be simulated directly, which checks the
    # root-and-Jacobian construction of the density end to end
    from portloss.moments import moment_plain

    rng = np.random.default_rng(42)
    n = 400_000
    z = rng.chisquare(market.n_fluct, n)
    u = rng.normal(0.0, math.sqrt(1.0 / market.n_fluct), n)
    m1 = np.asarray(moment_plain(1, z, u, 75.0, market))
    a, b = 0.05, 0.5
    p_mc = float(np.mean((m1 > a) & (m1 < b)))
    se = math.sqrt(p_mc * (1.0 - p_mc) / n)
    xs = np.linspace(a, b, 901)
    dens = [density_limit_equal_infinite(float(x), 75.0, market) for x in xs]
    p_an = float(np.trapezoid(dens, xs))
    assert abs(p_an - p_mc) < 4.0 * se + 1e-4


def test_finite_vs_infinite_frozen_and_scaling(market):
    v10 = density_limit_finite_vs_infinite(0.3, 0.3, 10, 75.0, market)
    v40 = density_limit_finite_vs_infinite(0.3, 0.3, 40, 75.0, market)
    assert v10 == pytest.approx(0.05049362434479736, rel=1e-10)
    # on the diagonal the Gaussian peak height scales like sqrt(r_one)
    assert v40 == pytest.approx(2.0 * v10, rel=1e-10)
    with pytest.raises(ParameterError):
        density_limit_finite_vs_infinite(0.3, 0.3, 1, 75.0, market)


def test_finite_vs_infinite_grid_matches_points(market):
    grid = limit_grid_finite_vs_infinite(10, 75.0, market, n_cells=9, lo=0.0, hi=0.6)
    xs, ys = grid.axes
    for i in (2, 4):
        for j in (3, 5):
            want = density_limit_finite_vs_infinite(
                float(xs[i]), float(ys[j]), 10, 75.0, market)
            assert grid.values[i, j] == pytest.approx(want, rel=1e-9, abs=1e-300)


def test_two_markets_frozen_and_symmetry(market):
    got = density_limit_two_markets(0.3, 0.3, 75.0, 75.0, market, market)
    assert got == pytest.approx(0.0008682534896672346, rel=1e-10)
    a = density_limit_two_markets(0.2, 0.4, 75.0, 75.0, market, market)
    b = density_limit_two_markets(0.4, 0.2, 75.0, 75.0, market, market)
    assert a == pytest.approx(b, rel=1e-10)
    other = MarketParams(mu=0.17, rho=0.35, c=0.28, n_fluct=8, t_mat=1.0, v0=100.0)
    with pytest.raises(ParameterError):
        density_limit_two_markets(0.3, 0.3, 75.0, 75.0, market, other)


def test_two_markets_grid_matches_points(market):
    grid = limit_grid_two_markets(75.0, 75.0, market, market, n_cells=9, lo=0.0, hi=0.6)
    xs, ys = grid.axes
    for i in (2, 6):
        for j in (3, 7):
            want = density_limit_two_markets(
                float(xs[i]), float(ys[j]), 75.0, 75.0, market, market)
            assert grid.values[i, j] == pytest.approx(want, rel=1e-9, abs=1e-300)


def test_ridge_density_drops_away_from_crest(market, faces):
    # moving senior loss off the crest at fixed junior loss loses density
    crest = density_limit_subordinated(0.0155, 0.4, faces, market)
    assert density_limit_subordinated(0.0125, 0.4, faces, market) < crest
    assert density_limit_subordinated(0.0185, 0.4, faces, market) < crest
