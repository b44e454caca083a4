"""Parameter budget shared by the whole pipeline.

All exponents and geometric constants live here so that every run can be
reproduced from a single serialized blob.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict


@dataclass(frozen=True)
class Params:
    """Dimensions, exponents and thresholds for one experiment.

    Derived quantities (``sigma``, ``M0``, ``N0``, ``beta``) are computed from
    the primitive fields and validated at construction time.
    """

    m: int = 2
    n: int = 1

    # Regularity exponents.  beta is derived: (1+gamma)(2-2*delta) = 2+2*beta.
    delta: float = 0.04
    gamma: float = 0.125
    lam: float = 0.125      # maximal-function truncation exponent (lambda)
    kappa: float = 0.0625   # cut-and-paste radius exponent, must be < theta
    theta: float = 0.125    # mollification-scale exponent (vartheta)

    # Dyadic hierarchy.
    k_max_extra: int = 3          # finest level is N0 + k_max_extra
    cube_samples: int = 24        # samples across the diameter 8*M0*ell(L)

    # Numerical tolerances.
    plane_gtol: float = 1e-9      # optimal-plane gradient stopping threshold
    plane_max_iter: int = 200
    newton_rel_tol: float = 1e-12  # reparametrization residual, relative to scale
    slope_bound: float = 4.0       # |A| bound for near-horizontal planes
    rotation_bound: float = 0.2    # |Q - Id| bound for derived rotations
    excess_threshold: float = 0.05  # small-excess gate for the cm pipeline

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("dimensions must be positive")
        if not (0 < self.gamma <= 1):
            raise ValueError("gamma must lie in (0, 1]")
        if self.beta <= 0:
            raise ValueError(
                f"beta = {self.beta:.4g} <= 0: need delta < gamma/(1+gamma)"
                f" = {self.gamma / (1 + self.gamma):.4g}"
            )
        if not self.kappa < self.theta:
            raise ValueError("kappa must be strictly smaller than theta")
        if not 32 * math.sqrt(self.n) * self.sigma * 2.0 ** (-self.N0) < 1:
            raise AssertionError("N0 computation violated its defining bound")

    # -- derived constants -------------------------------------------------

    @property
    def sigma(self) -> float:
        return 1.0 / (2.0 * math.sqrt(self.m))

    @property
    def M0(self) -> float:
        return math.sqrt(self.n)

    @property
    def N0(self) -> int:
        # smallest integer with 32*sqrt(n)*sigma*2^-N0 < 1
        target = 32.0 * math.sqrt(self.n) * self.sigma
        N0 = 0
        while target * 2.0 ** (-N0) >= 1.0:
            N0 += 1
        return N0

    @property
    def beta(self) -> float:
        return ((1.0 + self.gamma) * (2.0 - 2.0 * self.delta) - 2.0) / 2.0

    @property
    def k_max(self) -> int:
        return self.N0 + self.k_max_extra

    def side_length(self, level: int) -> float:
        """Sidelength of a level-``level`` cube of the subdivision of
        [-sigma, sigma]^m into 2^(m*level) closed cubes."""
        return 2.0 * self.sigma * 2.0 ** (-level)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(
            sigma=self.sigma,
            M0=self.M0,
            N0=self.N0,
            beta=self.beta,
            k_max=self.k_max,
        )
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Params":
        primitive = {
            k: d[k]
            for k in (
                "m", "n", "delta", "gamma", "lam", "kappa", "theta",
                "k_max_extra", "cube_samples", "plane_gtol", "plane_max_iter",
                "newton_rel_tol", "slope_bound", "rotation_bound",
                "excess_threshold",
            )
            if k in d
        }
        return cls(**primitive)


def unit_ball_volume(m: int) -> float:
    """Volume of the unit ball in R^m (omega_m)."""
    return math.pi ** (m / 2.0) / math.gamma(m / 2.0 + 1.0)
