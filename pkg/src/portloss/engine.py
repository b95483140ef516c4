"""Portfolio loss densities, cell masses and correlations.

Losses conditioned on the scale variable z and the common factor u are sums
of many independent obligor losses, so each conditional slice is treated as
Gaussian with the exact conditional mean and covariance; the unconditional
objects are mixtures of those slices over the (z, u) quadrature rule.

Two scenario flavours are supported.  A subordinated scenario tracks the
joint (senior, junior) loss of one tranched portfolio.  A plain scenario
tracks one or two creditors without tranching: either an explicit overlap
pattern inside a single market, a per-creditor face matrix, or one creditor
per market in a block-structured multi-market portfolio.

Numerical care points, all load-bearing:
  * densities are evaluated in log space and nodes whose conditional
    covariance collapses are masked (they carry a delta slice that a point
    density cannot represent);
  * cell masses use a probability-space substitution per slice, so
    arbitrarily narrow slices are integrated exactly and total mass is
    conserved to machine precision;
  * second moments never subtract nearly equal numbers: the exact
    conditional decomposition E[L_a L_b] = E[M1_a M1_b + Cov_ab] is used.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import (
    ParameterError,
    SingularCovarianceError,
    UndefinedCorrelationError,
)
from .grids import DensityGrid, cell_centers
from .moments import (
    junior_mean_target,
    moment_junior,
    moment_plain,
    moment_senior,
)
from .params import (
    MarketParams,
    MultiMarketParams,
    OverlapSpec,
    SubordinationSpec,
)
from .quadrature import QuadratureSpec, chi2_nodes, gauss_nodes

__all__ = [
    "SubordinatedScenario",
    "NoSubScenario",
    "GaussianMomentTerms",
    "gaussian_moment_terms",
    "density_subordinated",
    "subordinated_cell_masses",
    "density_grid_subordinated",
    "marginal_density",
    "alphas",
    "density_nosub",
    "density_nosub_multimarket",
    "nosub_cell_masses",
    "density_grid_nosub",
    "no_default_probability",
    "tail_probability",
    "loss_correlation",
    "mass_accounting",
]

_VAR_FLOOR = 1e-300
_LOG_CLIP = 700.0

AnyParams = Union[MarketParams, MultiMarketParams]


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class SubordinatedScenario:
    """Homogeneous portfolio of ``k_obligors`` identical firms whose debt is
    split into a senior and a junior tranche."""

    k_obligors: int
    tranches: SubordinationSpec
    params: MarketParams

    def __post_init__(self):
        if not (isinstance(self.k_obligors, (int, np.integer)) and self.k_obligors >= 1):
            raise ParameterError(f"k_obligors must be a positive integer, got {self.k_obligors}")
        if not isinstance(self.tranches, SubordinationSpec):
            raise ParameterError("tranches must be a SubordinationSpec")
        if not isinstance(self.params, MarketParams):
            raise ParameterError("params must be MarketParams")

    @property
    def accuracy_warning(self) -> bool:
        """Below ~8 obligors the Gaussian slice approximation is dubious."""
        return self.k_obligors < 8


@dataclass(frozen=True)
class NoSubScenario:
    """Untranched portfolio seen by one or two creditors.

    Exactly one of the following layouts applies:

    * ``overlap`` set: single market, two creditors sharing ``k_obligors``
      identical firms of face ``overlap.f0`` according to the overlap
      fractions.
    * ``faces`` set: single market, explicit per-creditor face matrix of
      shape (creditors, k_obligors); heterogeneous faces allowed.
    * neither: homogeneous face ``face`` for every firm.  With single-market
      params there is one creditor; with multi-market params ``creditors``
      may be 1 (total loss) or the number of markets (one creditor per
      market block).
    """

    k_obligors: int
    params: AnyParams
    face: Optional[float] = None
    overlap: Optional[OverlapSpec] = None
    faces: Optional[tuple] = None
    creditors: Optional[int] = None

    def __post_init__(self):
        if not (isinstance(self.k_obligors, (int, np.integer)) and self.k_obligors >= 1):
            raise ParameterError(f"k_obligors must be a positive integer, got {self.k_obligors}")
        multi = isinstance(self.params, MultiMarketParams)
        if not multi and not isinstance(self.params, MarketParams):
            raise ParameterError("params must be MarketParams or MultiMarketParams")
        if multi and self.params.k_total != self.k_obligors:
            raise ParameterError(
                f"k_obligors={self.k_obligors} does not match market blocks "
                f"totalling {self.params.k_total}"
            )
        n_set = sum(x is not None for x in (self.overlap, self.faces))
        if n_set > 1:
            raise ParameterError("give at most one of overlap= or faces=")
        if self.overlap is not None:
            if multi:
                raise ParameterError("overlap layout requires single-market params")
            if self.face is not None and self.face != self.overlap.f0:
                raise ParameterError("face conflicts with overlap.f0")
            if self.creditors not in (None, 2):
                raise ParameterError("overlap layout has exactly 2 creditors")
        elif self.faces is not None:
            if multi:
                raise ParameterError("face-matrix layout requires single-market params")
            mat = np.atleast_2d(np.asarray(self.faces, dtype=float))
            if mat.shape[1] != self.k_obligors:
                raise ParameterError(
                    f"faces needs {self.k_obligors} columns, got {mat.shape[1]}"
                )
            if mat.shape[0] > 2:
                raise ParameterError("at most 2 creditors supported")
            if np.any(mat < 0) or np.any(mat.sum(axis=0) <= 0) or np.any(mat.sum(axis=1) <= 0):
                raise ParameterError(
                    "faces must be nonnegative with positive row and column sums"
                )
            object.__setattr__(self, "faces", tuple(tuple(row) for row in mat))
            if self.creditors not in (None, mat.shape[0]):
                raise ParameterError("creditors conflicts with the faces matrix")
            if self.face is not None:
                raise ParameterError("face conflicts with an explicit faces matrix")
        else:
            if self.face is None or not (self.face > 0):
                raise ParameterError("homogeneous layout needs face > 0")
            allowed = (1, self.params.beta) if multi else (1,)
            if self.creditors is None:
                object.__setattr__(self, "creditors", allowed[-1])
            elif self.creditors not in allowed:
                raise ParameterError(
                    f"creditors must be one of {sorted(set(allowed))} for this layout"
                )

    @property
    def n_creditors(self) -> int:
        if self.overlap is not None:
            return 2
        if self.faces is not None:
            return len(self.faces)
        return self.creditors

    @property
    def obligor_face(self) -> Optional[float]:
        """Common face per firm; None when faces are heterogeneous."""
        if self.overlap is not None:
            return self.overlap.f0
        if self.faces is not None:
            totals = np.asarray(self.faces).sum(axis=0)
            return float(totals[0]) if np.ptp(totals) == 0 else None
        return self.face

    @property
    def accuracy_warning(self) -> bool:
        return self.k_obligors < 8


class GaussianMomentTerms(NamedTuple):
    """Conditional mean/covariance of the (senior, junior) portfolio pair at
    fixed (z, u); the cross term is the exact conditional covariance."""

    mean_senior: np.ndarray
    var_senior: np.ndarray
    mean_junior: np.ndarray
    var_junior: np.ndarray
    cross: np.ndarray


# ---------------------------------------------------------------------------
# node tables


def _flat_nodes(params: MarketParams, quad: QuadratureSpec):
    z, wz = chi2_nodes(params.n_fluct, quad.z_nodes)
    u, wu = gauss_nodes(params.n_fluct, quad.u_nodes)
    zz = np.repeat(z, len(u))
    uu = np.tile(u, len(z))
    ww = np.repeat(wz, len(u)) * np.tile(wu, len(z))
    return zz, uu, ww


def gaussian_moment_terms(z, u, scenario: SubordinatedScenario) -> GaussianMomentTerms:
    """All five conditional aggregates of the tranched portfolio at (z, u).

    For the homogeneous portfolio with per-firm weight 1/K the senior and
    junior means equal the single-firm means while the (co)variances shrink
    by 1/K.  The junior mean includes the total-wipeout contribution; the
    cross covariance is m1_senior (1 - m0_senior - m1_junior_band) / K,
    which is exact because a firm whose senior tranche loses anything has
    junior loss exactly 1 minus the band part.
    """
    faces, params, k = scenario.tranches, scenario.params, scenario.k_obligors
    m0s = moment_senior(0, z, u, faces, params)
    m1s = moment_senior(1, z, u, faces, params)
    m2s = moment_senior(2, z, u, faces, params)
    m1j = moment_junior(1, z, u, faces, params)
    m2j = moment_junior(2, z, u, faces, params)
    mean_s = m1s
    var_s = np.maximum(m2s - m1s * m1s, 0.0) / k
    mean_j = m0s + m1j
    var_j = np.maximum(m0s + m2j - mean_j * mean_j, 0.0) / k
    cross = m1s * (1.0 - m0s - m1j) / k
    cap = np.sqrt(var_s * var_j)
    cross = np.clip(cross, -cap, cap)
    return GaussianMomentTerms(mean_s, var_s, mean_j, var_j, cross)


@lru_cache(maxsize=16)
def _sub_tables(scenario: SubordinatedScenario, quad: QuadratureSpec):
    z, u, w = _flat_nodes(scenario.params, quad)
    terms = gaussian_moment_terms(z, u, scenario)
    return w, terms


# ---------------------------------------------------------------------------
# safe Gaussian building blocks


def norm_cdf_safe(x, mean, sigma):
    """Normal CDF that degrades to a unit step when sigma == 0."""
    sigma = np.asarray(sigma, dtype=float)
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    pos = sigma > 0.0
    denom = np.where(pos, sigma, 1.0)
    with np.errstate(invalid="ignore"):
        body = ndtr((x - mean) / denom)
    step = (x >= mean).astype(float)
    return np.where(pos, body, step)


def _binormal_log_density(dx, dy, var_x, var_y, cov):
    """Log of the bivariate normal density via the conditional
    factorization; returns (log_pdf, valid_mask).  Slices whose covariance
    collapses are masked out rather than evaluated."""
    var_x = np.asarray(var_x, dtype=float)
    var_y = np.asarray(var_y, dtype=float)
    cov = np.asarray(cov, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(var_x > _VAR_FLOOR, cov / np.where(var_x > 0, var_x, 1.0), 0.0)
        var_c = var_y - slope * cov
    valid = (var_x > _VAR_FLOOR) & (var_c > _VAR_FLOOR)
    vx = np.where(valid, var_x, 1.0)
    vc = np.where(valid, var_c, 1.0)
    res = dy - slope * dx
    logp = (
        -math.log(2.0 * math.pi)
        - 0.5 * (np.log(vx) + np.log(vc))
        - 0.5 * (dx * dx / vx + res * res / vc)
    )
    return np.minimum(logp, _LOG_CLIP), valid


def _norm_log_density(dx, var_x):
    var_x = np.asarray(var_x, dtype=float)
    valid = var_x > _VAR_FLOOR
    vx = np.where(valid, var_x, 1.0)
    logp = -0.5 * math.log(2.0 * math.pi) - 0.5 * np.log(vx) - 0.5 * dx * dx / vx
    return np.minimum(logp, _LOG_CLIP), valid


def _mixture_cell_masses(w, mean_x, var_x, mean_y, var_y, cov, edges_x, edges_y, gl_points=8):
    """Exact cell masses of a bivariate-normal mixture on a rectangular grid.

    Per slice the x integral is substituted into probability space
    t = Phi((x - mean)/sigma), which turns any slice, however narrow, into a
    smooth integrand on [0, 1]; the y direction is then a difference of
    conditional CDFs.  Column totals per slice sum to the slice's x-cell
    probabilities exactly, so total mass is conserved by construction.
    Outermost edges may be +-inf to capture everything.
    """
    edges_x = np.asarray(edges_x, dtype=float)
    edges_y = np.asarray(edges_y, dtype=float)
    nx, ny = len(edges_x) - 1, len(edges_y) - 1
    tq, twq = np.polynomial.legendre.leggauss(gl_points)
    tq = 0.5 * (tq + 1.0)
    twq = 0.5 * twq
    out = np.zeros((nx, ny))
    chunk = max(1, int(2.5e6 / max(1, nx * gl_points * (ny + 1))))
    n_nodes = len(w)
    for s in range(0, n_nodes, chunk):
        e = min(n_nodes, s + chunk)
        wk = w[s:e, None, None]
        mx = np.asarray(mean_x)[s:e, None, None]
        vx = np.asarray(var_x)[s:e, None, None]
        my = np.asarray(mean_y)[s:e, None, None]
        vy = np.asarray(var_y)[s:e, None, None]
        cv = np.asarray(cov)[s:e, None, None]
        sx = np.sqrt(vx)
        # x-cell probabilities and in-cell probability nodes
        t_edges = norm_cdf_safe(edges_x[None, :, None], mx, sx)
        t_lo = t_edges[:, :-1, :]
        p_cell = t_edges[:, 1:, :] - t_lo
        t_nodes = t_lo + p_cell * tq[None, None, :]
        t_clip = np.clip(t_nodes, 1e-300, 1.0 - 1e-16)
        x_nodes = mx + sx * ndtri(t_clip)
        degen = vx <= _VAR_FLOOR
        slope = np.where(degen, 0.0, cv / np.where(degen, 1.0, vx))
        var_c = np.maximum(vy - slope * cv, 0.0)
        sc = np.sqrt(var_c)
        mu_c = my + slope * (x_nodes - mx)
        # (chunk, nx, q, ny_edges) conditional CDFs at y edges
        y_cdf = norm_cdf_safe(
            edges_y[None, None, None, :], mu_c[..., None], sc[..., None]
        )
        y_mass = np.diff(y_cdf, axis=-1)
        contrib = np.einsum("cxq,q,cxqy->xy", p_cell * wk, twq, y_mass)
        out += contrib
    return out


def _univariate_cell_masses(w, mean_x, var_x, edges_x):
    sx = np.sqrt(np.asarray(var_x, dtype=float))[:, None]
    mx = np.asarray(mean_x, dtype=float)[:, None]
    cdf = norm_cdf_safe(edges_x[None, :], mx, sx)
    return np.asarray(w) @ np.diff(cdf, axis=1)


# ---------------------------------------------------------------------------
# subordinated densities


def _check_loss_pair(l_senior, l_junior):
    if not (0.0 <= l_senior <= 1.0 and 0.0 <= l_junior <= 1.0):
        raise ParameterError(
            f"loss fractions must lie in [0, 1], got ({l_senior}, {l_junior})"
        )


def _density_sub_fixed(l_senior, l_junior, scenario, quad):
    w, t = _sub_tables(scenario, quad)
    logp, valid = _binormal_log_density(
        l_senior - t.mean_senior, l_junior - t.mean_junior,
        t.var_senior, t.var_junior, t.cross,
    )
    with np.errstate(under="ignore"):
        vals = np.where(valid, np.exp(logp), 0.0)
    return float(np.dot(w, vals))


def _density_sub_adaptive(l_senior, l_junior, scenario, quad):
    """Solver-localized refinement: panels are concentrated where the slice
    means cross the requested point, which is where all the mass of a large
    portfolio sits.  Falls back to a dense fixed rule when no crossing is
    found (the density is then dominated by slice tails)."""
    from .limits import solve_u_junior, solve_u_senior, solve_z0
    from .errors import NoRootError, MultipleRootsError
    from .quadrature import chi2_log_weight

    faces, params = scenario.tranches, scenario.params
    n = params.n_fluct
    dense = QuadratureSpec(z_nodes=max(quad.z_nodes, 128), u_nodes=max(quad.u_nodes, 128))
    try:
        sol = solve_z0(l_senior, l_junior, faces, params)
    except (NoRootError, MultipleRootsError):
        return _density_sub_fixed(l_senior, l_junior, scenario, dense)
    z0, u0 = sol.z0, sol.u0
    t0 = gaussian_moment_terms(np.array([z0]), np.array([u0]), scenario)
    from .moments import junior_mean_target_du, moment_senior_du

    du_s = abs(float(moment_senior_du(1, z0, u0, faces, params)))
    du_j = abs(float(junior_mean_target_du(z0, u0, faces, params)))
    if du_s < 1e-300 or du_j < 1e-300:
        return _density_sub_fixed(l_senior, l_junior, scenario, dense)
    sig_u = math.sqrt(
        float(t0.var_senior[0]) / du_s**2 + float(t0.var_junior[0]) / du_j**2
    )
    slope = abs(sol.separation_slope) if sol.separation_slope else 0.0
    sig_z = sig_u / slope if slope > 1e-300 else float("inf")
    span = 10.0
    from scipy.stats import chi2 as _chi2

    z_hi_all = float(_chi2.ppf(1.0 - 1e-12, n))
    z_lo = max(1e-8, z0 - span * sig_z)
    z_hi = min(z_hi_all, z0 + span * sig_z)
    if not (z_hi > z_lo):
        return _density_sub_fixed(l_senior, l_junior, scenario, dense)
    gl_z, glw_z = np.polynomial.legendre.leggauss(16)
    n_zpan = 10
    z_edges = np.linspace(z_lo, z_hi, n_zpan + 1)
    gl_u, glw_u = np.polynomial.legendre.leggauss(16)
    n_upan = 6
    log_gauss_norm = 0.5 * math.log(n / (2.0 * math.pi))
    total = 0.0
    for a, b in zip(z_edges[:-1], z_edges[1:]):
        zc = 0.5 * (a + b) + 0.5 * (b - a) * gl_z
        zw = 0.5 * (b - a) * glw_z
        for z, wz in zip(zc, zw):
            try:
                us = solve_u_senior(l_senior, z, faces, params).u
                uj = solve_u_junior(l_junior, z, faces, params).u
            except (NoRootError, MultipleRootsError):
                continue
            if abs(us - uj) > 100.0 * sig_u:
                continue
            u_lo = min(us, uj) - span * sig_u
            u_hi = max(us, uj) + span * sig_u
            u_edges = np.linspace(u_lo, u_hi, n_upan + 1)
            uc = (0.5 * (u_edges[:-1] + u_edges[1:])[:, None]
                  + 0.5 * (u_edges[1:] - u_edges[:-1])[:, None] * gl_u[None, :]).ravel()
            uw = (0.5 * (u_edges[1:] - u_edges[:-1])[:, None] * glw_u[None, :]).ravel()
            t = gaussian_moment_terms(np.full_like(uc, z), uc, scenario)
            logp, valid = _binormal_log_density(
                l_senior - t.mean_senior, l_junior - t.mean_junior,
                t.var_senior, t.var_junior, t.cross,
            )
            log_wt = (
                chi2_log_weight(z, n)
                + log_gauss_norm
                - 0.5 * n * uc * uc
            )
            with np.errstate(under="ignore"):
                vals = np.where(valid, np.exp(logp + log_wt), 0.0)
            total += wz * float(np.dot(uw, vals))
    return total


def density_subordinated(
    l_senior: float,
    l_junior: float,
    scenario: SubordinatedScenario,
    quad: QuadratureSpec = QuadratureSpec(),
) -> float:
    """Joint density of the (senior, junior) loss pair at one point.

    The value is per unit senior loss per unit junior loss; the origin atom
    (no defaults at all) is not part of the density and is reported by
    :func:`no_default_probability`.
    """
    _check_loss_pair(l_senior, l_junior)
    if quad.mode == "adaptive":
        return _density_sub_adaptive(l_senior, l_junior, scenario, quad)
    return _density_sub_fixed(l_senior, l_junior, scenario, quad)


def subordinated_cell_masses(
    scenario: SubordinatedScenario,
    edges_senior,
    edges_junior,
    quad: QuadratureSpec = QuadratureSpec(),
    gl_points: int = 8,
) -> np.ndarray:
    """Probability mass of the continuous approximation in each grid cell.

    Outermost edges may be +-inf; with edges (-inf, ..., +inf) on both axes
    the masses sum to 1 up to machine rounding.
    """
    w, t = _sub_tables(scenario, quad)
    return _mixture_cell_masses(
        w, t.mean_senior, t.var_senior, t.mean_junior, t.var_junior, t.cross,
        edges_senior, edges_junior, gl_points,
    )


def _sub_grid_rows(scenario, quad, xs, ys):
    out = np.empty((len(xs), len(ys)))
    if quad.mode == "adaptive":
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                out[i, j] = _density_sub_adaptive(x, y, scenario, quad)
        return out
    w, t = _sub_tables(scenario, quad)
    chunk = max(1, int(4.0e6 / max(1, len(w))))
    pts = [(i, j) for i in range(len(xs)) for j in range(len(ys))]
    for s in range(0, len(pts), chunk):
        block = pts[s : s + chunk]
        dx = np.array([xs[i] for i, _ in block])[:, None] - t.mean_senior[None, :]
        dy = np.array([ys[j] for _, j in block])[:, None] - t.mean_junior[None, :]
        logp, valid = _binormal_log_density(
            dx, dy, t.var_senior[None, :], t.var_junior[None, :], t.cross[None, :]
        )
        with np.errstate(under="ignore"):
            vals = np.where(valid, np.exp(logp), 0.0)
        res = vals @ w
        for k, (i, j) in enumerate(block):
            out[i, j] = res[k]
    return out


def density_grid_subordinated(
    scenario: SubordinatedScenario,
    quad: QuadratureSpec = QuadratureSpec(),
    n_cells: int = 101,
    lo: float = 0.0,
    hi: float = 1.0,
    workers: int = 1,
) -> DensityGrid:
    """Joint density sampled at the centers of an n_cells x n_cells grid."""
    centers = cell_centers(n_cells, lo, hi)
    if workers and workers > 1:
        blocks = np.array_split(np.arange(len(centers)), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [
                pool.submit(_sub_grid_rows, scenario, quad, centers[b], centers)
                for b in blocks
                if len(b)
            ]
            vals = np.vstack([f.result() for f in futs])
    else:
        vals = _sub_grid_rows(scenario, quad, centers, centers)
    meta = {
        "kind": "subordinated_joint",
        "k_obligors": scenario.k_obligors,
        "accuracy_warning": scenario.accuracy_warning,
        "quadrature": {
            "z_nodes": quad.z_nodes,
            "u_nodes": quad.u_nodes,
            "mode": quad.mode,
        },
    }
    return DensityGrid(axes=(centers, centers), values=vals, metadata=meta)


def marginal_density(
    which,
    scenario,
    quad: QuadratureSpec = QuadratureSpec(),
    n_cells: int = 201,
    lo: float = 0.0,
    hi: float = 1.0,
) -> DensityGrid:
    """Marginal density of one tracked loss on a 1-D grid.

    ``which`` is 'senior' or 'junior' for a tranched scenario and the
    creditor number 1 or 2 for a plain two-creditor scenario.  Integrating
    the conditional bivariate slice over the other coordinate is exact, so
    each marginal is the mixture of that slice's own Gaussian.
    """
    if isinstance(scenario, SubordinatedScenario):
        if which not in ("senior", "junior"):
            raise ParameterError(f"which must be 'senior' or 'junior', got {which!r}")
        w, t = _sub_tables(scenario, quad)
        mean = t.mean_senior if which == "senior" else t.mean_junior
        var = t.var_senior if which == "senior" else t.var_junior
        label = which
    else:
        if which not in (1, 2) or which > scenario.n_creditors:
            raise ParameterError(
                f"which must be a creditor number <= {scenario.n_creditors}, got {which!r}"
            )
        w, means, cov = _nosub_tables(scenario, quad)
        mean = means[which - 1]
        var = cov[which - 1, which - 1]
        label = f"creditor_{which}"
    centers = cell_centers(n_cells, lo, hi)
    logp, valid = _norm_log_density(centers[:, None] - mean[None, :], var[None, :])
    with np.errstate(under="ignore"):
        vals = np.where(valid, np.exp(logp), 0.0) @ w
    meta = {
        "kind": f"marginal_{label}",
        "k_obligors": scenario.k_obligors,
        "accuracy_warning": scenario.accuracy_warning,
    }
    return DensityGrid(axes=(centers,), values=vals, metadata=meta)


# ---------------------------------------------------------------------------
# plain (untranched) portfolios


def alphas(overlap: OverlapSpec):
    """Covariance inflation factors (a1, a12, a2) for two creditors sharing
    an overlap pattern; the pair covariance of the creditor losses is
    (single-firm loss variance / K) times [[a1, a12], [a12, a2]].

    Disjoint equal halves give (2, 0, 2); full overlap gives (1, 1, 1).
    """
    s1 = overlap.share_one
    s2 = overlap.share_two
    a1 = (overlap.r1 + overlap.gamma**2 * overlap.r12) / s1**2
    a12 = overlap.gamma * (1.0 - overlap.gamma) * overlap.r12 / (s1 * s2)
    r2 = 1.0 - overlap.r1 - overlap.r12
    a2 = (r2 + (1.0 - overlap.gamma) ** 2 * overlap.r12) / s2**2
    return float(a1), float(a12), float(a2)


def _weight_gram(scenario: NoSubScenario):
    """Gram matrix G with Cov(L_b, L_b') = sum_k w_bk w_b'k var_k; for the
    homogeneous layouts var_k is common so G multiplies a scalar."""
    if scenario.overlap is not None:
        a1, a12, a2 = alphas(scenario.overlap)
        return np.array([[a1, a12], [a12, a2]]) / scenario.k_obligors
    if scenario.faces is not None:
        mat = np.asarray(scenario.faces, dtype=float)
        wts = mat / mat.sum(axis=1, keepdims=True)
        return wts @ wts.T
    k = scenario.k_obligors
    return np.eye(scenario.n_creditors) / k  # per-creditor equal weights


def _creditor_weights(scenario: NoSubScenario) -> np.ndarray:
    """Per-firm portfolio weights, shape (creditors, k_obligors)."""
    k = scenario.k_obligors
    if scenario.overlap is not None:
        ov = scenario.overlap
        r1_n = int(round(ov.r1 * k))
        r12_n = int(round(ov.r12 * k))
        if abs(ov.r1 * k - r1_n) > 1e-9 or abs(ov.r12 * k - r12_n) > 1e-9:
            raise ParameterError(
                "overlap fractions must resolve to whole firm counts for "
                f"k_obligors={k}"
            )
        r2_n = k - r1_n - r12_n
        w = np.zeros((2, k))
        w[0, :r1_n] = 1.0
        w[0, r1_n : r1_n + r12_n] = ov.gamma
        w[1, r1_n : r1_n + r12_n] = 1.0 - ov.gamma
        w[1, r1_n + r12_n :] = 1.0
        return w / w.sum(axis=1, keepdims=True)
    if scenario.faces is not None:
        mat = np.asarray(scenario.faces, dtype=float)
        return mat / mat.sum(axis=1, keepdims=True)
    if isinstance(scenario.params, MultiMarketParams) and scenario.n_creditors > 1:
        # one creditor per market block
        w = np.zeros((scenario.n_creditors, k))
        col = 0
        for idx, (_, k_l) in enumerate(scenario.params.blocks):
            w[idx, col : col + k_l] = 1.0 / k_l
            col += k_l
        return w
    return np.full((scenario.n_creditors, k), 1.0 / k)


@lru_cache(maxsize=16)
def _nosub_tables(scenario: NoSubScenario, quad: QuadratureSpec):
    """Flat node tables: weights w, creditor means (B, n) and covariance
    components (B, B, n)."""
    if isinstance(scenario.params, MultiMarketParams):
        return _nosub_tables_multi(scenario, quad)
    params = scenario.params
    z, u, w = _flat_nodes(params, quad)
    if scenario.faces is not None:
        mat = np.asarray(scenario.faces, dtype=float)
        totals = mat.sum(axis=0)
        wts = mat / mat.sum(axis=1, keepdims=True)
        uniq, inv = np.unique(totals, return_inverse=True)
        m1u = np.stack([moment_plain(1, z, u, f, params) for f in uniq])
        m2u = np.stack([moment_plain(2, z, u, f, params) for f in uniq])
        m1 = m1u[inv]  # (K, n)
        var = np.maximum(m2u[inv] - m1 * m1, 0.0)
        means = wts @ m1
        cov = np.einsum("bk,ck,kn->bcn", wts, wts, var)
        return w, means, cov
    face = scenario.obligor_face
    m1 = moment_plain(1, z, u, face, params)
    m2 = moment_plain(2, z, u, face, params)
    var = np.maximum(m2 - m1 * m1, 0.0)
    gram = _weight_gram(scenario)
    b = scenario.n_creditors
    means = np.broadcast_to(m1, (b, len(m1))).copy()
    cov = gram[:, :, None] * var[None, None, :]
    return w, means, cov


def _multi_nodes(params: MultiMarketParams, quad: QuadratureSpec):
    """Shared-z nodes with a tensor Gauss grid over the per-market factors.

    Returns flat arrays: z (n,), u (beta, n), w (n,)."""
    beta = params.beta
    n = params.n_fluct
    z, wz = chi2_nodes(n, quad.z_nodes)
    u1, wu1 = gauss_nodes(n, quad.u_nodes)
    grids = np.meshgrid(*([u1] * beta), indexing="ij")
    u_flat = np.stack([g.ravel() for g in grids])  # (beta, nu^beta)
    wu = np.prod(
        np.stack([g.ravel() for g in np.meshgrid(*([wu1] * beta), indexing="ij")]),
        axis=0,
    )
    nu = u_flat.shape[1]
    zz = np.repeat(z, nu)
    uu = np.tile(u_flat, len(z))
    ww = np.repeat(wz, nu) * np.tile(wu, len(z))
    return zz, uu, ww


def _nosub_tables_multi(scenario: NoSubScenario, quad: QuadratureSpec):
    params: MultiMarketParams = scenario.params
    face = scenario.face
    zz, uu, ww = _multi_nodes(params, quad)
    k_total = params.k_total
    m1_blocks = []
    var_blocks = []
    for idx, (mkt, k_l) in enumerate(params.blocks):
        m1 = moment_plain(1, zz, uu[idx], face, mkt)
        m2 = moment_plain(2, zz, uu[idx], face, mkt)
        m1_blocks.append(m1)
        var_blocks.append(np.maximum(m2 - m1 * m1, 0.0))
    if scenario.n_creditors == 1:
        wts = np.array([[k_l / k_total for (_, k_l) in params.blocks]])
    else:
        wts = np.eye(params.beta)
    m1_arr = np.stack(m1_blocks)  # (beta, n)
    var_arr = np.stack(var_blocks)
    k_arr = np.array([k_l for (_, k_l) in params.blocks], dtype=float)
    means = wts @ m1_arr
    # markets are conditionally independent, so covariances add per block
    cov = np.einsum("bl,cl,ln->bcn", wts, wts, var_arr / k_arr[:, None])
    return ww, means, cov


def _check_gram(scenario: NoSubScenario):
    if scenario.n_creditors != 2:
        return
    g = _weight_gram(scenario) if not isinstance(scenario.params, MultiMarketParams) else None
    if g is None:
        return
    det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
    if det <= 1e-14 * g[0, 0] * g[1, 1]:
        raise SingularCovarianceError(
            "the two creditor portfolios are proportional, so their joint "
            "density is singular; model the common loss with a single "
            "creditor (equal-loss parametrization) instead"
        )


def _nosub_density_point(point, scenario, quad):
    w, means, cov = _nosub_tables(scenario, quad)
    b = scenario.n_creditors
    if b == 1:
        logp, valid = _norm_log_density(point[0] - means[0], cov[0, 0])
    else:
        logp, valid = _binormal_log_density(
            point[0] - means[0], point[1] - means[1],
            cov[0, 0], cov[1, 1], cov[0, 1],
        )
    with np.errstate(under="ignore"):
        vals = np.where(valid, np.exp(logp), 0.0)
    return float(np.dot(w, vals))


def _as_point(l, b):
    arr = np.atleast_1d(np.asarray(l, dtype=float))
    if arr.shape != (b,):
        raise ParameterError(f"expected {b} loss component(s), got shape {arr.shape}")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ParameterError(f"loss fractions must lie in [0, 1], got {arr}")
    return arr


def density_nosub(
    l,
    scenario: NoSubScenario,
    quad: QuadratureSpec = QuadratureSpec(),
) -> float:
    """Density of the creditor loss (scalar) or loss pair for a
    single-market untranched scenario.

    Raises SingularCovarianceError when the two creditor portfolios are
    proportional, in which case the pair has no two-dimensional density.
    """
    if isinstance(scenario.params, MultiMarketParams):
        raise ParameterError("use density_nosub_multimarket for multi-market scenarios")
    _check_gram(scenario)
    point = _as_point(l, scenario.n_creditors)
    return _nosub_density_point(point, scenario, quad)


def density_nosub_multimarket(
    l,
    scenario: NoSubScenario,
    quad: QuadratureSpec = QuadratureSpec(),
) -> float:
    """Density of the total loss (one creditor) or the per-market creditor
    loss vector for a block multi-market scenario."""
    if not isinstance(scenario.params, MultiMarketParams):
        raise ParameterError("scenario does not carry multi-market params")
    point = _as_point(l, scenario.n_creditors)
    if scenario.n_creditors > 2:
        # product of independent conditional Gaussians, any beta
        w, means, cov = _nosub_tables(scenario, quad)
        total_logp = 0.0
        valid = np.ones(len(w), dtype=bool)
        for b in range(scenario.n_creditors):
            logp, ok = _norm_log_density(point[b] - means[b], cov[b, b])
            total_logp = total_logp + logp
            valid &= ok
        with np.errstate(under="ignore"):
            vals = np.where(valid, np.exp(total_logp), 0.0)
        return float(np.dot(w, vals))
    return _nosub_density_point(point, scenario, quad)


def nosub_cell_masses(
    scenario: NoSubScenario,
    edges_one,
    edges_two=None,
    quad: QuadratureSpec = QuadratureSpec(),
    gl_points: int = 8,
) -> np.ndarray:
    """Cell masses of the continuous approximation for a plain scenario;
    1-D when the scenario has a single creditor."""
    w, means, cov = _nosub_tables(scenario, quad)
    if scenario.n_creditors == 1:
        return _univariate_cell_masses(w, means[0], cov[0, 0], np.asarray(edges_one, float))
    if edges_two is None:
        edges_two = edges_one
    return _mixture_cell_masses(
        w, means[0], cov[0, 0], means[1], cov[1, 1], cov[0, 1],
        np.asarray(edges_one, float), np.asarray(edges_two, float), gl_points,
    )


def density_grid_nosub(
    scenario: NoSubScenario,
    quad: QuadratureSpec = QuadratureSpec(),
    n_cells: int = 101,
    lo: float = 0.0,
    hi: float = 1.0,
) -> DensityGrid:
    """Creditor loss density on a grid (1-D or 2-D with two creditors)."""
    centers = cell_centers(n_cells, lo, hi)
    b = scenario.n_creditors
    if b > 2:
        raise ParameterError("grids supported for at most 2 creditors")
    w, means, cov = _nosub_tables(scenario, quad)
    if b == 1:
        logp, valid = _norm_log_density(centers[:, None] - means[0][None, :], cov[0, 0][None, :])
        with np.errstate(under="ignore"):
            vals = np.where(valid, np.exp(logp), 0.0) @ w
        axes = (centers,)
    else:
        _check_gram(scenario)
        vals = np.empty((len(centers), len(centers)))
        chunk = max(1, int(4.0e6 / max(1, len(w))))
        pts = [(i, j) for i in range(len(centers)) for j in range(len(centers))]
        for s in range(0, len(pts), chunk):
            block = pts[s : s + chunk]
            dx = np.array([centers[i] for i, _ in block])[:, None] - means[0][None, :]
            dy = np.array([centers[j] for _, j in block])[:, None] - means[1][None, :]
            logp, valid = _binormal_log_density(
                dx, dy, cov[0, 0][None, :], cov[1, 1][None, :], cov[0, 1][None, :]
            )
            with np.errstate(under="ignore"):
                v = np.where(valid, np.exp(logp), 0.0)
            res = v @ w
            for k2, (i, j) in enumerate(block):
                vals[i, j] = res[k2]
        axes = (centers, centers)
    meta = {
        "kind": "plain_joint" if b == 2 else "plain_total",
        "k_obligors": scenario.k_obligors,
        "accuracy_warning": scenario.accuracy_warning,
    }
    return DensityGrid(axes=axes, values=vals, metadata=meta)


# ---------------------------------------------------------------------------
# probabilities and correlations


def no_default_probability(
    k_obligors: int,
    face: float,
    params: AnyParams,
    quad: QuadratureSpec = QuadratureSpec(),
) -> float:
    """Probability that none of the firms defaults by maturity.

    This is exact (no Gaussian approximation): conditionally on (z, u) the
    firms default independently with probability m0, so the no-default mass
    is the mixture of (1 - m0)^K.
    """
    if not (isinstance(k_obligors, (int, np.integer)) and k_obligors >= 1):
        raise ParameterError(f"k_obligors must be a positive integer, got {k_obligors}")
    if isinstance(params, MultiMarketParams):
        if params.k_total != k_obligors:
            raise ParameterError("k_obligors does not match the market blocks")
        zz, uu, ww = _multi_nodes(params, quad)
        log_surv = np.zeros(len(ww))
        for idx, (mkt, k_l) in enumerate(params.blocks):
            m0 = moment_plain(0, zz, uu[idx], face, mkt)
            log_surv += k_l * np.log1p(-np.minimum(m0, 1.0 - 1e-16))
        with np.errstate(under="ignore"):
            return float(np.dot(ww, np.exp(log_surv)))
    z, u, w = _flat_nodes(params, quad)
    m0 = moment_plain(0, z, u, face, params)
    with np.errstate(under="ignore"):
        surv = np.exp(k_obligors * np.log1p(-np.minimum(m0, 1.0 - 1e-16)))
    return float(np.dot(w, surv))


def tail_probability(
    threshold: float,
    scenario: NoSubScenario,
    quad: QuadratureSpec = QuadratureSpec(),
) -> float:
    """P(total portfolio loss > threshold) for a single-creditor scenario,
    computed as a mixture of Gaussian tail masses."""
    if scenario.n_creditors != 1:
        raise ParameterError("tail_probability applies to single-creditor scenarios")
    w, means, cov = _nosub_tables(scenario, quad)
    sx = np.sqrt(cov[0, 0])
    tail = 1.0 - norm_cdf_safe(threshold, means[0], sx)
    return float(np.dot(w, tail))


def _analytic_pair_stats(scenario, quad):
    """(means, second moments, cross moment) of the tracked loss pair using
    the exact conditional decomposition."""
    if isinstance(scenario, SubordinatedScenario):
        w, t = _sub_tables(scenario, quad)
        e1 = float(np.dot(w, t.mean_senior))
        e2 = float(np.dot(w, t.mean_junior))
        s1 = float(np.dot(w, t.mean_senior**2 + t.var_senior))
        s2 = float(np.dot(w, t.mean_junior**2 + t.var_junior))
        cross = float(np.dot(w, t.mean_senior * t.mean_junior + t.cross))
        return (e1, e2), (s1, s2), cross
    if scenario.n_creditors != 2:
        raise ParameterError("loss_correlation needs a pair of tracked losses")
    w, means, cov = _nosub_tables(scenario, quad)
    e1 = float(np.dot(w, means[0]))
    e2 = float(np.dot(w, means[1]))
    s1 = float(np.dot(w, means[0] ** 2 + cov[0, 0]))
    s2 = float(np.dot(w, means[1] ** 2 + cov[1, 1]))
    cross = float(np.dot(w, means[0] * means[1] + cov[0, 1]))
    return (e1, e2), (s1, s2), cross


def loss_correlation(
    scenario,
    method: str = "mc",
    quad: QuadratureSpec = QuadratureSpec(),
    mc_config=None,
) -> float:
    """Correlation of the tracked loss pair (senior/junior for a tranched
    scenario, the two creditors otherwise).

    method 'analytic' uses exact mixture moments; 'mc' (default) estimates
    from simulated portfolios and is the validation path.

    Raises UndefinedCorrelationError when a marginal variance vanishes
    (e.g. faces so small relative to firm value that nobody ever defaults
    at working precision).
    """
    if method == "analytic":
        (e1, e2), (s1, s2), cross = _analytic_pair_stats(scenario, quad)
        v1 = s1 - e1 * e1
        v2 = s2 - e2 * e2
        if v1 <= 1e-300 or v2 <= 1e-300:
            raise UndefinedCorrelationError(
                "a marginal loss variance vanishes; correlation is undefined"
            )
        return float((cross - e1 * e2) / math.sqrt(v1 * v2))
    if method != "mc":
        raise ParameterError(f"method must be 'mc' or 'analytic', got {method!r}")
    from . import mc as _mc

    cfg = mc_config if mc_config is not None else _mc.McConfig()
    run = _mc.estimate(scenario, cfg)
    return run.loss_correlation()


def mass_accounting(
    scenario,
    quad: QuadratureSpec = QuadratureSpec(),
    n_cells: int = 50,
    mc_origin_excess_mass: float = 0.0,
) -> dict:
    """Normalization audit of the continuous approximation.

    The true law splits into the origin atom (no defaults), line masses
    along the axes (one tracked loss exactly zero, plus tiny wipeout
    lattice lines), and a continuous rest.  The mixture approximates the
    whole law, smearing the atoms into the origin-adjacent cells (first
    row/column).  The audit sums the mixture mass away from those cells,
    the exact no-default probability, and the MC-estimated true mass
    inside the origin-adjacent region beyond the exact-zero atom
    (``mc_origin_excess_mass``: line masses plus small genuine losses),
    and reports the drift from 1.  The drift measures the quality of the
    second-order approximation, not of the quadrature.
    """
    edges_ext = np.linspace(0.0, 1.0, n_cells + 1)
    edges_ext[0] = -np.inf
    edges_ext[-1] = np.inf
    if isinstance(scenario, SubordinatedScenario):
        masses = subordinated_cell_masses(scenario, edges_ext, edges_ext, quad)
        origin = float(masses[0, :].sum() + masses[1:, 0].sum())
        away = float(masses[1:, 1:].sum())
        face_total = scenario.tranches.f_total
    else:
        if scenario.n_creditors == 1:
            masses = nosub_cell_masses(scenario, edges_ext, quad=quad)
            origin = float(masses[0])
            away = float(masses[1:].sum())
        else:
            masses = nosub_cell_masses(scenario, edges_ext, edges_ext, quad=quad)
            origin = float(masses[0, :].sum() + masses[1:, 0].sum())
            away = float(masses[1:, 1:].sum())
        face_total = scenario.obligor_face
    if face_total is None:
        raise ParameterError("mass accounting needs a common obligor face")
    p_nd = no_default_probability(scenario.k_obligors, face_total, scenario.params, quad)
    total = away + p_nd + mc_origin_excess_mass
    return {
        "continuous_mass_away_from_origin": away,
        "origin_region_mass": origin,
        "no_default_probability": p_nd,
        "mc_origin_excess_mass": mc_origin_excess_mass,
        "mixture_total": away + origin,
        "account_total": total,
        "abs_error": abs(total - 1.0),
    }
