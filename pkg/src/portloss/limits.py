"""Infinite-portfolio limit densities.

As the number of obligors grows, the conditional Gaussian slices sharpen
into delta constraints: each tracked loss pins the conditional mean, and
the remaining density is the (z, u) weight transported through the implicit
functions that solve mean = loss.  Evaluating a limit density therefore
means root solving, not integration in u; only a z integral (at most)
survives.

All solvers use bracketed safeguarded Newton iterations with the exact
closed-form derivatives of the conditional means.  Roots are searched on
u in [-12, 12]/sqrt(N) and z in [1e-6, chi2 quantile 1 - 1e-10]; outside
these brackets the weights are below anything that could move a six-digit
result, and the density is treated as exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import chi2 as _chi2_dist

from .errors import (
    ConvergenceError,
    MonotonicityError,
    MultipleRootsError,
    NoRootError,
    ParameterError,
)
from .grids import DensityGrid, cell_centers
from .moments import (
    junior_mean_target,
    junior_mean_target_du,
    junior_mean_target_dz,
    moment_plain,
    moment_plain_du,
    moment_plain_dz,
    moment_senior,
    moment_senior_du,
    moment_senior_dz,
)
from .params import MarketParams, SubordinationSpec
from .quadrature import QuadratureSpec, chi2_log_weight, chi2_nodes

__all__ = [
    "ImplicitSolve",
    "u_bracket",
    "z_bracket",
    "newton_bisect",
    "solve_u_senior",
    "solve_u_junior",
    "solve_u_plain",
    "solve_z0",
    "density_limit_subordinated",
    "density_limit_equal_infinite",
    "density_limit_finite_vs_infinite",
    "density_limit_two_markets",
    "limit_grid_subordinated",
    "limit_curve_equal_infinite",
    "limit_grid_finite_vs_infinite",
    "limit_grid_two_markets",
]

_JAC_FLOOR = 1e-14
_RESID_TOL = 1e-10


@dataclass(frozen=True)
class ImplicitSolve:
    """Result of one implicit-function solve.

    Residuals of every defining equation are below 1e-10 and all roots lie
    inside the search brackets; ``quality`` is 1.0 when a Jacobian factor
    at the root is nearly singular (ridge of the density).
    """

    targets: tuple
    residuals: tuple
    iterations: int
    u: Optional[float] = None
    z0: Optional[float] = None
    u0: Optional[float] = None
    u_one: Optional[float] = None
    u_two: Optional[float] = None
    separation_slope: Optional[float] = None
    quality: float = 0.0


def u_bracket(params: MarketParams):
    half = 12.0 / math.sqrt(params.n_fluct)
    return -half, half


def z_bracket(params: MarketParams):
    return 1e-6, float(_chi2_dist.ppf(1.0 - 1e-10, params.n_fluct))


def _gauss_log_weight(u, n_fluct):
    return 0.5 * math.log(n_fluct / (2.0 * math.pi)) - 0.5 * n_fluct * u * u


def newton_bisect(f, df, lo, hi, f_lo=None, f_hi=None, tol=1e-12, max_iter=200):
    """Root of f on [lo, hi] by Newton steps safeguarded with bisection.

    The bracket must straddle a sign change.  Newton proposals that leave
    the bracket, or fail to shrink it quickly enough, are replaced by
    bisection, so termination is guaranteed.  Returns (root, iterations).
    """
    f_lo = f(lo) if f_lo is None else f_lo
    f_hi = f(hi) if f_hi is None else f_hi
    if f_lo == 0.0:
        return lo, 0
    if f_hi == 0.0:
        return hi, 0
    if (f_lo > 0) == (f_hi > 0):
        raise NoRootError(f"no sign change on [{lo}, {hi}]")
    x = 0.5 * (lo + hi)
    step_prev = abs(hi - lo)
    for it in range(1, max_iter + 1):
        fx = f(x)
        if fx == 0.0:
            return x, it
        if (fx > 0) == (f_hi > 0):
            hi, f_hi = x, fx
        else:
            lo, f_lo = x, fx
        dfx = df(x)
        use_newton = dfx != 0.0
        if use_newton:
            step = fx / dfx
            x_new = x - step
            # reject steps that leave the bracket or stall
            if not (lo < x_new < hi) or abs(step) > 0.5 * step_prev:
                use_newton = False
        if not use_newton:
            x_new = 0.5 * (lo + hi)
            step = x_new - x
        step_prev = abs(step)
        x = x_new
        if abs(step) < tol * max(1.0, abs(x)) or (hi - lo) < tol * max(1.0, abs(x)):
            return x, it
    raise ConvergenceError(
        f"root iteration did not converge in {max_iter} steps",
        best_estimate=x,
        error_bound=hi - lo,
    )


def _check_monotone(g, lo, hi, label):
    """32-point scan asserting the solver's monotonicity assumption."""
    xs = np.linspace(lo, hi, 32)
    vals = np.array([g(x) for x in xs])
    scale = max(1e-12, float(np.max(np.abs(vals))))
    if np.any(np.diff(vals) < -1e-12 * scale):
        raise MonotonicityError(
            f"{label} is not nondecreasing on the bracket; solver assumptions violated"
        )


def _solve_u(target, z, mean_fn, dmean_fn, params, validate, label):
    if not (z > 0):
        raise ParameterError(f"z must be > 0, got {z}")
    lo, hi = u_bracket(params)
    g = lambda u: float(mean_fn(z, u))
    if validate:
        _check_monotone(g, lo, hi, label)
    f = lambda u: g(u) - target
    f_lo, f_hi = f(lo), f(hi)
    if not (f_lo < 0.0 <= f_hi or f_lo <= 0.0 < f_hi):
        raise NoRootError(
            f"{label} target {target} outside the attainable range "
            f"[{g(lo):.3e}, {g(hi):.3e}] at z={z}; the limit density is 0 there"
        )
    root, iters = newton_bisect(f, lambda u: float(dmean_fn(z, u)), lo, hi, f_lo, f_hi)
    resid = abs(f(root))
    if resid > _RESID_TOL:
        raise ConvergenceError(
            f"{label} residual {resid:.2e} above tolerance",
            best_estimate=root,
            error_bound=resid,
        )
    return ImplicitSolve(
        targets=(target,), residuals=(resid,), iterations=iters, u=root
    )


def solve_u_senior(
    l_senior: float,
    z: float,
    faces: SubordinationSpec,
    params: MarketParams,
    validate: bool = False,
) -> ImplicitSolve:
    """u root of mean senior loss = l_senior at fixed z.

    The senior conditional mean is strictly increasing in u, so the root is
    unique when it exists; targets outside the attainable range raise
    NoRootError (the limit density is zero there).
    """
    return _solve_u(
        l_senior,
        z,
        lambda zz, uu: moment_senior(1, zz, uu, faces, params),
        lambda zz, uu: moment_senior_du(1, zz, uu, faces, params),
        params,
        validate,
        "senior mean",
    )


def solve_u_junior(
    l_junior: float,
    z: float,
    faces: SubordinationSpec,
    params: MarketParams,
    validate: bool = False,
) -> ImplicitSolve:
    """u root of mean junior loss (wipeout + band) = l_junior at fixed z."""
    return _solve_u(
        l_junior,
        z,
        lambda zz, uu: junior_mean_target(zz, uu, faces, params),
        lambda zz, uu: junior_mean_target_du(zz, uu, faces, params),
        params,
        validate,
        "junior mean",
    )


def solve_u_plain(
    l: float,
    z: float,
    face: float,
    params: MarketParams,
    validate: bool = False,
) -> ImplicitSolve:
    """u root of mean untranched loss = l at fixed z."""
    return _solve_u(
        l,
        z,
        lambda zz, uu: moment_plain(1, zz, uu, face, params),
        lambda zz, uu: moment_plain_du(1, zz, uu, face, params),
        params,
        validate,
        "plain mean",
    )


def _du_dz(z, u, mean_dz, mean_du):
    """Implicit-function slope du/dz along mean(z, u(z)) = const."""
    den = float(mean_du(z, u))
    if abs(den) < 1e-300:
        return float("inf")
    return -float(mean_dz(z, u)) / den


def _sep_fns(l_senior, l_junior, faces, params, validate=False):
    """Closures for u_senior(z) - u_junior(z) and its z derivative."""

    def sep(z):
        us = solve_u_senior(l_senior, z, faces, params, validate=validate).u
        uj = solve_u_junior(l_junior, z, faces, params, validate=validate).u
        return us - uj

    def sep_dz(z):
        us = solve_u_senior(l_senior, z, faces, params).u
        uj = solve_u_junior(l_junior, z, faces, params).u
        ds = _du_dz(
            z, us,
            lambda zz, uu: moment_senior_dz(1, zz, uu, faces, params),
            lambda zz, uu: moment_senior_du(1, zz, uu, faces, params),
        )
        dj = _du_dz(
            z, uj,
            lambda zz, uu: junior_mean_target_dz(zz, uu, faces, params),
            lambda zz, uu: junior_mean_target_du(zz, uu, faces, params),
        )
        return ds - dj

    return sep, sep_dz


def _refine_crossings(l_senior, l_junior, crossings, z_span, faces, params, validate=False):
    """Newton-refine every bracketed sign change; returns the single root
    or raises MultipleRootsError (anomaly) on genuinely distinct roots."""
    sep, sep_dz = _sep_fns(l_senior, l_junior, faces, params, validate=validate)
    roots = []
    total_iters = 0
    for a, b, fa, fb in crossings:
        z_root, iters = newton_bisect(sep, sep_dz, a, b, fa, fb)
        total_iters += iters
        # an exact zero at a scan node flags both neighbors; keep one
        if not roots or abs(z_root - roots[-1]) > 1e-9 * z_span:
            roots.append(z_root)
    if len(roots) > 1:
        raise MultipleRootsError(
            f"{len(roots)} crossing points found for losses "
            f"({l_senior}, {l_junior}); uniqueness assumption violated",
            roots=tuple(roots),
        )
    z0 = roots[0]
    sol_s = solve_u_senior(l_senior, z0, faces, params)
    sol_j = solve_u_junior(l_junior, z0, faces, params)
    u0 = 0.5 * (sol_s.u + sol_j.u)
    slope = sep_dz(z0)
    resid_sep = abs(sol_s.u - sol_j.u)
    return ImplicitSolve(
        targets=(l_senior, l_junior),
        residuals=(sol_s.residuals[0], sol_j.residuals[0], resid_sep),
        iterations=total_iters + sol_s.iterations + sol_j.iterations,
        z0=z0,
        u0=u0,
        u_one=sol_s.u,
        u_two=sol_j.u,
        separation_slope=slope,
        quality=1.0 if abs(slope) < _JAC_FLOOR else 0.0,
    )


def _bracket_crossings(zs, vals):
    """Consecutive feasible scan pairs with a sign change."""
    feasible = ~np.isnan(vals)
    idx = np.flatnonzero(
        feasible[:-1] & feasible[1:] & (np.sign(vals[:-1]) != np.sign(vals[1:]))
    )
    return [(zs[i], zs[i + 1], vals[i], vals[i + 1]) for i in idx], feasible


def solve_z0(
    l_senior: float,
    l_junior: float,
    faces: SubordinationSpec,
    params: MarketParams,
    n_scan: int = 96,
    validate: bool = False,
) -> ImplicitSolve:
    """z at which the senior and junior u roots coincide.

    Scans the z bracket, refines every sign change of u_senior(z) -
    u_junior(z), and demands exactly one root: several roots raise
    MultipleRootsError (anomaly, never silently resolved), none raise
    NoRootError (the limit density is zero at that loss pair).
    """
    z_lo, z_hi = z_bracket(params)
    zs = np.linspace(z_lo, z_hi, n_scan)
    sep, _ = _sep_fns(l_senior, l_junior, faces, params, validate=validate)
    vals = np.full(len(zs), np.nan)
    for i, z in enumerate(zs):
        try:
            vals[i] = sep(z)
        except NoRootError:
            continue
    crossings, feasible = _bracket_crossings(zs, vals)
    if not feasible.any():
        raise NoRootError(
            f"no z in [{z_lo:.3g}, {z_hi:.3g}] makes both targets attainable"
        )
    if not crossings:
        raise NoRootError(
            f"u roots never coincide for losses ({l_senior}, {l_junior}); "
            "limit density is 0 there"
        )
    return _refine_crossings(
        l_senior, l_junior, crossings, z_hi - z_lo, faces, params, validate=validate
    )


# ---------------------------------------------------------------------------
# limit densities


def _density_at_crossing(sol: ImplicitSolve, faces, params):
    """(density, quality) from a solved senior/junior crossing point."""
    z0, u0 = sol.z0, sol.u0
    du_s = abs(float(moment_senior_du(1, z0, u0, faces, params)))
    du_j = abs(float(junior_mean_target_du(z0, u0, faces, params)))
    slope = abs(sol.separation_slope)
    quality = 1.0 if min(du_s, du_j, slope) < _JAC_FLOOR else sol.quality
    log_w = chi2_log_weight(z0, params.n_fluct) + _gauss_log_weight(u0, params.n_fluct)
    denom = du_s * du_j * slope
    if denom == 0.0:
        return float("inf"), 1.0
    return math.exp(log_w) / denom, quality


def _sub_point(l_senior, l_junior, faces, params, n_scan):
    """(density, quality) of the subordinated limit at one point; (0, 0)
    where no crossing exists."""
    if not (0.0 <= l_senior <= 1.0 and 0.0 <= l_junior <= 1.0):
        raise ParameterError("loss fractions must lie in [0, 1]")
    try:
        sol = solve_z0(l_senior, l_junior, faces, params, n_scan=n_scan)
    except NoRootError:
        return 0.0, 0.0
    return _density_at_crossing(sol, faces, params)


def density_limit_subordinated(
    l_senior: float,
    l_junior: float,
    faces: SubordinationSpec,
    params: MarketParams,
    n_scan: int = 96,
) -> float:
    """Limit of the joint (senior, junior) density for an infinitely large
    homogeneous portfolio.

    Both delta constraints collapse, leaving the (z, u) weight divided by
    the three Jacobian factors at the solved crossing point.  Zero where
    the losses cannot be realized; near-singular Jacobians are reported
    through the grid quality flag, never clipped.
    """
    return _sub_point(l_senior, l_junior, faces, params, n_scan)[0]


def density_limit_equal_infinite(
    l: float,
    face: float,
    params: MarketParams,
    quad: QuadratureSpec = QuadratureSpec(),
) -> float:
    """Univariate limit density of the common loss of equal infinite
    portfolios in one market.

    The bivariate limit object is this density supported on the equal-loss
    line l1 = l2: the portfolio losses become perfectly correlated, and no
    overlap parameter survives in the formula.
    """
    if not (0.0 < l < 1.0):
        raise ParameterError(f"loss must lie strictly inside (0, 1), got {l}")
    z, wz = chi2_nodes(params.n_fluct, quad.z_nodes)
    total = 0.0
    for zi, wi in zip(z, wz):
        try:
            u0 = solve_u_plain(l, float(zi), face, params).u
        except NoRootError:
            continue
        du = abs(float(moment_plain_du(1, zi, u0, face, params)))
        if du < 1e-300:
            continue
        # wz already carries the chi2 weight; add the Gaussian u factor
        total += wi * math.exp(_gauss_log_weight(u0, params.n_fluct)) / du
    return total


def density_limit_finite_vs_infinite(
    l_one: float,
    l_two: float,
    r_one: int,
    face: float,
    params: MarketParams,
    quad: QuadratureSpec = QuadratureSpec(),
) -> float:
    """Joint density of a finite disjoint portfolio of ``r_one`` obligors
    (loss l_one) against an infinite one (loss l_two) in the same market.

    Only the infinite side collapses to a delta; the finite side keeps a
    Gaussian slice of width shrinking like 1/sqrt(r_one) around the
    conditional mean, which the delta pins to l_two itself.
    """
    if r_one < 2:
        raise ParameterError(f"finite portfolio needs at least 2 obligors, got {r_one}")
    if not (0.0 <= l_one <= 1.0 and 0.0 < l_two < 1.0):
        raise ParameterError("losses out of range")
    z, wz = chi2_nodes(params.n_fluct, quad.z_nodes)
    total = 0.0
    for zi, wi in zip(z, wz):
        try:
            u0 = solve_u_plain(l_two, float(zi), face, params).u
        except NoRootError:
            continue
        du = abs(float(moment_plain_du(1, zi, u0, face, params)))
        if du < 1e-300:
            continue
        m1 = float(moment_plain(1, zi, u0, face, params))
        m2 = float(moment_plain(2, zi, u0, face, params))
        var = max(m2 - m1 * m1, 0.0) / r_one
        if var < 1e-300:
            continue
        log_g = -0.5 * math.log(2.0 * math.pi * var) - 0.5 * (l_one - m1) ** 2 / var
        total += (
            wi
            * math.exp(_gauss_log_weight(u0, params.n_fluct) + min(log_g, 700.0))
            / du
        )
    return total


def density_limit_two_markets(
    l_one: float,
    l_two: float,
    face_one: float,
    face_two: float,
    params_one: MarketParams,
    params_two: MarketParams,
    quad: QuadratureSpec = QuadratureSpec(),
) -> float:
    """Joint limit density of two infinite disjoint portfolios, one per
    market, coupled only through the shared scale variable z."""
    if params_one.n_fluct != params_two.n_fluct:
        raise ParameterError("both markets must share the fluctuation parameter")
    if not (0.0 < l_one < 1.0 and 0.0 < l_two < 1.0):
        raise ParameterError("losses must lie strictly inside (0, 1)")
    n = params_one.n_fluct
    z, wz = chi2_nodes(n, quad.z_nodes)
    total = 0.0
    for zi, wi in zip(z, wz):
        try:
            u1 = solve_u_plain(l_one, float(zi), face_one, params_one).u
            u2 = solve_u_plain(l_two, float(zi), face_two, params_two).u
        except NoRootError:
            continue
        du1 = abs(float(moment_plain_du(1, zi, u1, face_one, params_one)))
        du2 = abs(float(moment_plain_du(1, zi, u2, face_two, params_two)))
        if min(du1, du2) < 1e-300:
            continue
        total += (
            wi
            * math.exp(_gauss_log_weight(u1, n) + _gauss_log_weight(u2, n))
            / (du1 * du2)
        )
    return total


# ---------------------------------------------------------------------------
# grid builders


def _u_root_table(solver, values, zs, faces, params) -> np.ndarray:
    """u roots for every (target value, z) pair; NaN where unattainable.

    Shared by the grid builders: the roots depend on one axis value and z
    only, so solving once per row instead of once per cell cuts the solve
    count by the grid size.
    """
    out = np.full((len(values), len(zs)), np.nan)
    for i, l in enumerate(values):
        for k, z in enumerate(zs):
            try:
                out[i, k] = solver(float(l), float(z), faces, params).u
            except NoRootError:
                continue
    return out


def limit_grid_subordinated(
    faces: SubordinationSpec,
    params: MarketParams,
    n_cells: int = 101,
    lo: float = 0.0,
    hi: float = 1.0,
    n_scan: int = 96,
) -> DensityGrid:
    centers = cell_centers(n_cells, lo, hi)
    z_lo, z_hi = z_bracket(params)
    zs = np.linspace(z_lo, z_hi, n_scan)
    us_tab = _u_root_table(solve_u_senior, centers, zs, faces, params)
    uj_tab = _u_root_table(solve_u_junior, centers, zs, faces, params)
    vals = np.zeros((len(centers), len(centers)))
    qual = np.zeros_like(vals)
    for i, x in enumerate(centers):
        for j, y in enumerate(centers):
            sep_vals = us_tab[i] - uj_tab[j]
            crossings, feasible = _bracket_crossings(zs, sep_vals)
            if not crossings:
                continue
            try:
                sol = _refine_crossings(
                    float(x), float(y), crossings, z_hi - z_lo, faces, params
                )
            except (NoRootError, MultipleRootsError):
                vals[i, j], qual[i, j] = 0.0, 1.0
                continue
            vals[i, j], qual[i, j] = _density_at_crossing(sol, faces, params)
    meta = {"kind": "limit_subordinated_joint"}
    return DensityGrid(axes=(centers, centers), values=vals, metadata=meta, quality=qual)


def limit_curve_equal_infinite(
    face: float,
    params: MarketParams,
    quad: QuadratureSpec = QuadratureSpec(),
    n_cells: int = 201,
    lo: float = 1e-3,
    hi: float = 1.0 - 1e-3,
) -> DensityGrid:
    centers = cell_centers(n_cells, lo, hi)
    vals = np.array(
        [density_limit_equal_infinite(float(x), face, params, quad) for x in centers]
    )
    meta = {"kind": "limit_equal_infinite", "support": "equal_loss_line"}
    return DensityGrid(axes=(centers,), values=vals, metadata=meta)


def limit_grid_finite_vs_infinite(
    r_one: int,
    face: float,
    params: MarketParams,
    quad: QuadratureSpec = QuadratureSpec(),
    n_cells: int = 101,
    lo: float = 0.0,
    hi: float = 1.0,
) -> DensityGrid:
    if r_one < 2:
        raise ParameterError(f"finite portfolio needs at least 2 obligors, got {r_one}")
    centers = cell_centers(n_cells, lo, hi)
    z, wz = chi2_nodes(params.n_fluct, quad.z_nodes)
    vals = np.zeros((len(centers), len(centers)))
    # the implicit solve depends on the infinite-side loss only, so build
    # the per-column node data once and sweep the finite axis vectorized
    for j, y in enumerate(centers):
        if not (0.0 < y < 1.0):
            continue
        w_eff, m1s, variances = [], [], []
        for zi, wi in zip(z, wz):
            try:
                u0 = solve_u_plain(float(y), float(zi), face, params).u
            except NoRootError:
                continue
            du = abs(float(moment_plain_du(1, zi, u0, face, params)))
            if du < 1e-300:
                continue
            m1 = float(moment_plain(1, zi, u0, face, params))
            m2 = float(moment_plain(2, zi, u0, face, params))
            var = max(m2 - m1 * m1, 0.0) / r_one
            if var < 1e-300:
                continue
            w_eff.append(wi * math.exp(_gauss_log_weight(u0, params.n_fluct)) / du)
            m1s.append(m1)
            variances.append(var)
        if not w_eff:
            continue
        w_eff = np.asarray(w_eff)
        m1s = np.asarray(m1s)
        variances = np.asarray(variances)
        log_g = (
            -0.5 * np.log(2.0 * math.pi * variances)[None, :]
            - 0.5 * (centers[:, None] - m1s[None, :]) ** 2 / variances[None, :]
        )
        with np.errstate(under="ignore"):
            vals[:, j] = np.exp(np.minimum(log_g, 700.0)) @ w_eff
    meta = {"kind": "limit_finite_vs_infinite", "r_one": r_one}
    return DensityGrid(axes=(centers, centers), values=vals, metadata=meta)


def limit_grid_two_markets(
    face_one: float,
    face_two: float,
    params_one: MarketParams,
    params_two: MarketParams,
    quad: QuadratureSpec = QuadratureSpec(),
    n_cells: int = 101,
    lo: float = 0.0,
    hi: float = 1.0,
) -> DensityGrid:
    if params_one.n_fluct != params_two.n_fluct:
        raise ParameterError("both markets must share the fluctuation parameter")
    n = params_one.n_fluct
    centers = cell_centers(n_cells, lo, hi)
    z, wz = chi2_nodes(n, quad.z_nodes)

    def axis_factor(face, params):
        # per-axis implicit weight exp(gauss)/|du| at each (loss, z) node
        fac = np.zeros((len(centers), len(z)))
        for i, l in enumerate(centers):
            if not (0.0 < l < 1.0):
                continue
            for k, zi in enumerate(z):
                try:
                    u0 = solve_u_plain(float(l), float(zi), face, params).u
                except NoRootError:
                    continue
                du = abs(float(moment_plain_du(1, zi, u0, face, params)))
                if du < 1e-300:
                    continue
                fac[i, k] = math.exp(_gauss_log_weight(u0, n)) / du
        return fac

    fac_one = axis_factor(face_one, params_one)
    fac_two = axis_factor(face_two, params_two)
    vals = np.einsum("ik,jk,k->ij", fac_one, fac_two, wz)
    meta = {"kind": "limit_two_markets"}
    return DensityGrid(axes=(centers, centers), values=vals, metadata=meta)
