"""Domain parameter types.

All types are small frozen dataclasses validated on construction, so a value
that exists is a value that is usable.  They are hashable, which lets the
engine memoize per-node moment tables keyed by scenario.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ParameterError


@dataclass(frozen=True)
class MarketParams:
    """Parameters of one market block.

    Attributes
    ----------
    mu : float
        Drift per year.
    rho : float
        Volatility per square-root year.
    c : float
        Average asset correlation level, in [0, 1).
    n_fluct : float
        Correlation fluctuation strength; larger means correlations frozen
        closer to their average.  Positive real, not restricted to integers.
    t_mat : float
        Horizon in years.
    v0 : float
        Initial asset value, currency units.
    """

    mu: float
    rho: float
    c: float
    n_fluct: float
    t_mat: float
    v0: float

    def __post_init__(self):
        if not (self.rho > 0):
            raise ParameterError(f"rho must be > 0, got {self.rho}")
        if not (0 <= self.c < 1):
            raise ParameterError(f"c must be in [0, 1), got {self.c}")
        if not (self.n_fluct > 0):
            raise ParameterError(f"n_fluct must be > 0, got {self.n_fluct}")
        if not (self.t_mat > 0):
            raise ParameterError(f"t_mat must be > 0, got {self.t_mat}")
        if not (self.v0 > 0):
            raise ParameterError(f"v0 must be > 0, got {self.v0}")

    @property
    def drift_adj(self) -> float:
        """Risk-adjusted log drift (mu - rho^2/2) per year."""
        return self.mu - 0.5 * self.rho**2


@dataclass(frozen=True)
class MultiMarketParams:
    """A block-diagonal market structure: independent market blocks sharing
    one fluctuation strength and one scale variable.

    ``blocks`` is an ordered tuple of (MarketParams, obligor count) pairs.
    """

    blocks: tuple[tuple[MarketParams, int], ...]

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise ParameterError("at least one market block required")
        # normalize lists to tuples so the dataclass stays hashable
        object.__setattr__(
            self, "blocks", tuple((p, int(k)) for p, k in self.blocks)
        )
        n0 = self.blocks[0][0].n_fluct
        for p, k in self.blocks:
            if not isinstance(p, MarketParams):
                raise ParameterError("each block needs a MarketParams")
            if p.n_fluct != n0:
                raise ParameterError("n_fluct must be shared across blocks")
            if k < 1:
                raise ParameterError(f"block size must be >= 1, got {k}")

    @property
    def beta(self) -> int:
        """Number of market blocks."""
        return len(self.blocks)

    @property
    def n_fluct(self) -> float:
        return self.blocks[0][0].n_fluct

    @property
    def k_total(self) -> int:
        return sum(k for _, k in self.blocks)


@dataclass(frozen=True)
class SubordinationSpec:
    """Per-obligor split of the face value into a senior and a junior piece.

    The senior creditor is repaid first; the junior piece absorbs losses
    until it is wiped out.
    """

    f_senior: float
    f_junior: float

    def __post_init__(self):
        if self.f_senior < 0:
            raise ParameterError(f"f_senior must be >= 0, got {self.f_senior}")
        if not (self.f_junior > 0):
            raise ParameterError(f"f_junior must be > 0, got {self.f_junior}")

    @property
    def f_total(self) -> float:
        return self.f_senior + self.f_junior


@dataclass(frozen=True)
class OverlapSpec:
    """How two creditors share a homogeneous pool of obligors.

    r1 is the fraction of obligors exclusive to creditor one, r12 the shared
    fraction, and gamma creditor one's share of each shared obligor's face.
    The remaining fraction 1 - r1 - r12 is exclusive to creditor two.
    ``f0`` is the common total face value per obligor.
    """

    r1: float
    r12: float
    gamma: float
    f0: float

    def __post_init__(self):
        if self.r1 < 0 or self.r12 < 0:
            raise ParameterError("overlap fractions must be >= 0")
        if self.r1 + self.r12 > 1 + 1e-12:
            raise ParameterError(
                f"r1 + r12 must be <= 1, got {self.r1 + self.r12}"
            )
        if not (0 <= self.gamma <= 1):
            raise ParameterError(f"gamma must be in [0, 1], got {self.gamma}")
        if not (self.f0 > 0):
            raise ParameterError(f"f0 must be > 0, got {self.f0}")

    @property
    def share_one(self) -> float:
        """Creditor one's fraction of the total pool face, r1 + gamma*r12."""
        return self.r1 + self.gamma * self.r12

    @property
    def share_two(self) -> float:
        return 1.0 - self.share_one


@dataclass(frozen=True)
class DefaultThreshold:
    """A transformed default boundary together with its ingredients.

    ``f_hat`` is (ln(face/v0) - (mu - rho^2/2) T) / sqrt(z): the rescaled
    log boundary an obligor's standardized terminal value is compared with.
    """

    f_hat: float
    face: float
    params: MarketParams = field(repr=False)
    z: float

    def __post_init__(self):
        if not (self.face > 0):
            raise ParameterError(f"face must be > 0, got {self.face}")
        if not (self.z > 0):
            raise ParameterError(f"z must be > 0, got {self.z}")
        expected = (
            math.log(self.face / self.params.v0)
            - self.params.drift_adj * self.params.t_mat
        ) / math.sqrt(self.z)
        if not math.isclose(self.f_hat, expected, rel_tol=0, abs_tol=1e-12):
            raise ParameterError("f_hat inconsistent with its components")
