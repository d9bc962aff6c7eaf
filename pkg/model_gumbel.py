"""
Gumbel's bivariate exponential distribution: survival function, exact sampling
through a positive-stable frailty, and the first two moments.

    S(y1, y2) = exp(-[(y1/theta1)^(1/delta) + (y2/theta2)^(1/delta)]^delta)

Both marginals are exponential with means theta1 and theta2; delta = 1 is
independence and smaller delta means stronger positive dependence.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import integrate, special

from errors import ConfigError, ConvergenceError

logger = logging.getLogger(__name__)

# (y/theta)^(1/delta) overflows long before delta reaches 0
MIN_DELTA = 0.05


@dataclass(frozen=True)
class GumbelBveParams:
    theta1: float
    theta2: float
    delta: float

    def __post_init__(self):
        for name in ("theta1", "theta2", "delta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite, got {value!r}")
        if self.theta1 <= 0 or self.theta2 <= 0:
            raise ConfigError(f"scale parameters must be positive, got ({self.theta1}, {self.theta2})")
        if not (MIN_DELTA <= self.delta <= 1.0):
            raise ConfigError(f"delta must lie in [{MIN_DELTA}, 1], got {self.delta}")

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2], dtype=float)

    @property
    def independent(self) -> bool:
        return self.delta == 1.0

    def scaled(self, multiplier1: float, multiplier2: float) -> "GumbelBveParams":
        """Same dependence, scales multiplied stream by stream."""
        return GumbelBveParams(self.theta1 * multiplier1, self.theta2 * multiplier2, self.delta)


@dataclass(frozen=True)
class TbePair:
    y1: float
    y2: float

    def __post_init__(self):
        if not (self.y1 >= 0 and self.y2 >= 0):
            raise ConfigError(f"time-between-events must be nonnegative, got ({self.y1}, {self.y2})")

    def as_array(self) -> np.ndarray:
        return np.array([self.y1, self.y2], dtype=float)


@dataclass(frozen=True)
class MomentSummary:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def correlation(self) -> float:
        c = self.covariance
        return float(c[0, 1] / math.sqrt(c[0, 0] * c[1, 1]))


# The four in-control models of the comparison study.
MODEL_PRESETS = {
    1: GumbelBveParams(1.0, 2.0, 1.0),
    2: GumbelBveParams(1.0, 2.0, 0.5),
    3: GumbelBveParams(10.0, 2.0, 1.0),
    4: GumbelBveParams(10.0, 2.0, 0.5),
}


def _log_exponent(params: GumbelBveParams, y1, y2):
    """log of [(y1/theta1)^(1/delta) + (y2/theta2)^(1/delta)]^delta, overflow-free."""
    with np.errstate(divide="ignore"):
        a = np.log(np.asarray(y1, dtype=float) / params.theta1) / params.delta
        b = np.log(np.asarray(y2, dtype=float) / params.theta2) / params.delta
    return params.delta * np.logaddexp(a, b)


def survival(params: GumbelBveParams, y: TbePair) -> float:
    """Joint survival probability P(Y1 > y1, Y2 > y2)."""
    return float(survival_grid(params, y.y1, y.y2))


def survival_grid(params: GumbelBveParams, y1, y2) -> np.ndarray:
    """Vectorised survival over broadcastable arrays of nonnegative coordinates."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if np.any(y1 < 0) or np.any(y2 < 0):
        raise ConfigError("survival is defined for nonnegative coordinates only")
    return np.exp(-np.exp(_log_exponent(params, y1, y2)))


def _log_positive_stable(delta: float, rng: np.random.Generator, size) -> np.ndarray:
    # Kanter's representation, evaluated in logs so small delta cannot overflow.
    u = np.pi * (1.0 - rng.random(size))
    w = rng.standard_exponential(size)
    with np.errstate(divide="ignore"):
        return (
            np.log(np.sin(delta * u))
            - np.log(np.sin(u)) / delta
            + (1.0 - delta) / delta * (np.log(np.sin((1.0 - delta) * u)) - np.log(w))
        )


def sample_positive_stable(delta: float, rng: np.random.Generator, size: Optional[int] = None):
    """
    Draw S > 0 with Laplace transform E[exp(-t S)] = exp(-t^delta), 0 < delta < 1.

    Returns a float when size is None, otherwise an array of draws.
    """
    if not (0.0 < delta < 1.0):
        raise ConfigError(f"positive-stable index must lie in (0, 1), got {delta}")
    draws = np.exp(_log_positive_stable(delta, rng, 1 if size is None else size))
    return float(draws[0]) if size is None else draws


def sample_pairs(params: GumbelBveParams, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw `size` pairs as an array of shape (size, 2)."""
    if params.independent:
        return rng.standard_exponential((size, 2)) * params.theta
    log_s = _log_positive_stable(params.delta, rng, size)
    e = rng.standard_exponential((size, 2))
    with np.errstate(divide="ignore"):
        return params.theta * np.exp(params.delta * (np.log(e) - log_s[:, None]))


def sample_pair(params: GumbelBveParams, rng: np.random.Generator) -> TbePair:
    y1, y2 = sample_pairs(params, rng, 1)[0]
    return TbePair(float(y1), float(y2))


def cross_moment_factor(delta: float) -> float:
    """E[Y1 Y2] / (theta1 theta2) = delta Gamma(delta)^2 / Gamma(2 delta)."""
    return math.exp(math.log(delta) + 2.0 * special.gammaln(delta) - special.gammaln(2.0 * delta))


def moments(params: GumbelBveParams) -> MomentSummary:
    off = params.theta1 * params.theta2 * (cross_moment_factor(params.delta) - 1.0)
    if params.independent:
        off = 0.0
    covariance = np.array(
        [[params.theta1 ** 2, off], [off, params.theta2 ** 2]],
        dtype=float,
    )
    return MomentSummary(mean=params.theta, covariance=covariance)


def kendall_tau(params: GumbelBveParams) -> float:
    return 1.0 - params.delta


def truncation_box(params: GumbelBveParams, tol: float) -> Tuple[float, float]:
    """
    Upper integration limits (c*theta1, c*theta2) such that the survival mass
    outside the box is below tol/10.

    Uses S(y1, y2) <= exp(-(y1/theta1 + y2/theta2) / 2), so each of the two
    outer strips contributes at most 4 theta1 theta2 exp(-c/2).
    """
    c = 2.0 * math.log(80.0 * params.theta1 * params.theta2 / tol)
    c = max(c, 1.0)
    return c * params.theta1, c * params.theta2


def numeric_cov_oracle(params: GumbelBveParams, tol: float = 1e-6) -> float:
    """
    Cov(Y1, Y2) by adaptive quadrature of E[Y1 Y2] = double integral of S.

    Independent check on the closed form used by `moments`.
    """
    if not tol > 0:
        raise ConfigError(f"tol must be positive, got {tol}")
    a1, a2 = truncation_box(params, tol)
    inv_delta = 1.0 / params.delta
    t1, t2, delta = params.theta1, params.theta2, params.delta

    def integrand(y2: float, y1: float) -> float:
        s = (y1 / t1) ** inv_delta + (y2 / t2) ** inv_delta
        return math.exp(-(s ** delta))

    value, abserr = integrate.nquad(
        integrand,
        [[0.0, a2], [0.0, a1]],
        opts={"epsabs": tol / 4, "epsrel": 0.0, "limit": 200},
    )
    logger.debug("quadrature E[Y1Y2]=%.10g abserr=%.3g box=(%.4g, %.4g)", value, abserr, a1, a2)
    if not abserr <= tol / 2:
        raise ConvergenceError(
            f"quadrature error estimate {abserr:.3g} exceeds tolerance {tol:.3g}"
        )
    return value - t1 * t2
