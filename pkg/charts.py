"""
Online control charts for bivariate time-between-events data.

* MEWMA on complete vectors:
      z_i = lam (Y_i - mu) + (1 - lam) z_{i-1},  z_0 = 0
      E_i^2 = (2 - lam) / lam * z_i' Sigma^-1 z_i,  signal when E_i^2 > h
* Paired one-sided EWMA (PEWMA), clamped at the in-control means:
      upper: z_ij = max(theta_0j, lam y_ij + (1 - lam) z_{i-1,j}), signal when z_ij > U_j
      lower: z_ij = min(theta_0j, lam y_ij + (1 - lam) z_{i-1,j}), signal when z_ij < L_j
* Shewhart TBE chart, one (h_L, h_U) pair per stream, stateless.

Every chart exposes a one-observation update returning a `Decision`. The
`*_scan` functions process a block of observations at once for simulation and
stop at the first crossing.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from errors import ConfigError
from model_gumbel import GumbelBveParams, TbePair, moments

SINGULAR_TOL = 1e-12


class Direction(str, Enum):
    UPPER = "upper"  # detects increases in mean TBE
    LOWER = "lower"  # detects decreases in mean TBE


@dataclass(frozen=True)
class Decision:
    signaled: bool
    statistic: float
    source: Optional[int] = None

    def __post_init__(self):
        if self.source is not None and not self.signaled:
            raise ConfigError("a decision with a source stream must be a signal")


def _as_pair(y) -> np.ndarray:
    if isinstance(y, TbePair):
        return y.as_array()
    arr = np.asarray(y, dtype=float)
    if arr.shape != (2,):
        raise ConfigError(f"expected a pair of observations, got shape {arr.shape}")
    return arr


def _check_lambda(lam: float) -> None:
    if not (0.0 < lam <= 1.0):
        raise ConfigError(f"smoothing constant must lie in (0, 1], got {lam}")


# --- MEWMA -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MewmaConfig:
    lam: float
    mean: np.ndarray
    covariance: np.ndarray
    limit_h: float
    inverse: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _check_lambda(self.lam)
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        if mean.shape != (2,) or cov.shape != (2, 2):
            raise ConfigError("MEWMA is bivariate: mean must have 2 entries and covariance be 2x2")
        if not self.limit_h > 0:
            raise ConfigError(f"control limit h must be positive, got {self.limit_h}")
        (a, b), (c, d) = cov
        if abs(b - c) > SINGULAR_TOL * max(abs(a), abs(d), 1.0):
            raise ConfigError("covariance matrix must be symmetric")
        det = a * d - b * c
        if det <= SINGULAR_TOL or a <= 0:
            raise ConfigError(f"covariance matrix is singular or not positive definite (det={det:.3g})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "inverse", np.array([[d, -b], [-c, a]]) / det)

    @classmethod
    def from_model(cls, params: GumbelBveParams, lam: float, limit_h: float) -> "MewmaConfig":
        summary = moments(params)
        return cls(lam=lam, mean=summary.mean, covariance=summary.covariance, limit_h=limit_h)

    @property
    def scale(self) -> float:
        return (2.0 - self.lam) / self.lam

    def with_limit(self, limit_h: float) -> "MewmaConfig":
        return MewmaConfig(self.lam, self.mean, self.covariance, limit_h)

    def statistic(self, z: np.ndarray) -> float:
        return float(self.scale * (z @ self.inverse @ z))


@dataclass(frozen=True, eq=False)
class MewmaState:
    z: np.ndarray
    last_stat: float = 0.0
    samples_seen: int = 0


def mewma_init(config: MewmaConfig) -> MewmaState:
    return MewmaState(z=np.zeros(2))


def mewma_update(state: MewmaState, config: MewmaConfig, y) -> Tuple[MewmaState, Decision]:
    z = config.lam * (_as_pair(y) - config.mean) + (1.0 - config.lam) * state.z
    stat = config.statistic(z)
    new_state = MewmaState(z=z, last_stat=stat, samples_seen=state.samples_seen + 1)
    return new_state, Decision(signaled=stat > config.limit_h, statistic=stat)


def mewma_scan(state: MewmaState, config: MewmaConfig, ys: np.ndarray) -> Tuple[MewmaState, Optional[int]]:
    """
    Feed a block of shape (n, 2). Returns the state after the first signal (or
    after the block) and the block index of that signal, if any.
    """
    if len(ys) == 0:
        return state, None
    lam = config.lam
    z, _ = signal.lfilter(
        [lam], [1.0, -(1.0 - lam)], ys - config.mean, axis=0,
        zi=((1.0 - lam) * state.z)[None, :],
    )
    stats = config.scale * np.einsum("ij,jk,ik->i", z, config.inverse, z)
    hits = np.flatnonzero(stats > config.limit_h)
    stop = int(hits[0]) if hits.size else len(ys) - 1
    new_state = MewmaState(z=z[stop], last_stat=float(stats[stop]), samples_seen=state.samples_seen + stop + 1)
    return new_state, (stop if hits.size else None)


# --- paired one-sided EWMA ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class PewmaConfig:
    lam: float
    theta0: np.ndarray
    direction: Direction
    limits: np.ndarray

    def __post_init__(self):
        _check_lambda(self.lam)
        theta0 = np.asarray(self.theta0, dtype=float)
        limits = np.asarray(self.limits, dtype=float)
        direction = Direction(self.direction)
        if theta0.shape != (2,) or limits.shape != (2,):
            raise ConfigError("paired EWMA needs two in-control means and two limits")
        if np.any(theta0 <= 0):
            raise ConfigError("in-control means must be positive")
        if direction is Direction.LOWER and not np.all((limits > 0) & (limits < theta0)):
            raise ConfigError(f"lower limits must satisfy 0 < L_j < theta_0j, got {limits.tolist()}")
        if direction is Direction.UPPER and not np.all(limits > theta0):
            raise ConfigError(f"upper limits must satisfy U_j > theta_0j, got {limits.tolist()}")
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "limits", limits)
        object.__setattr__(self, "direction", direction)

    @classmethod
    def from_scale(cls, theta0: Sequence[float], lam: float, direction: Direction, scale: float) -> "PewmaConfig":
        """Proportional limits: L_j = c theta_0j (lower) or U_j = c theta_0j (upper)."""
        theta0 = np.asarray(theta0, dtype=float)
        return cls(lam=lam, theta0=theta0, direction=direction, limits=scale * theta0)

    @property
    def upper(self) -> bool:
        return self.direction is Direction.UPPER

    def with_scale(self, scale: float) -> "PewmaConfig":
        return PewmaConfig.from_scale(self.theta0, self.lam, self.direction, scale)

    def crossed(self, stream: int, z: float) -> bool:
        return z > self.limits[stream] if self.upper else z < self.limits[stream]

    def step(self, stream: int, z_old: float, y: float) -> float:
        raw = self.lam * y + (1.0 - self.lam) * z_old
        theta = self.theta0[stream]
        return max(theta, raw) if self.upper else min(theta, raw)


@dataclass(frozen=True)
class PewmaState:
    z: Tuple[float, float]
    samples_seen: int = 0


def pewma_init(config: PewmaConfig) -> PewmaState:
    return PewmaState(z=(float(config.theta0[0]), float(config.theta0[1])))


def _pewma_decision(config: PewmaConfig, z: Tuple[float, float]) -> Decision:
    for j, zj in enumerate(z):
        if config.crossed(j, zj):
            return Decision(signaled=True, statistic=zj, source=j)
    # report the stream nearest to its limit
    ratios = [zj / limit for zj, limit in zip(z, config.limits)]
    j = int(np.argmax(ratios)) if config.upper else int(np.argmin(ratios))
    return Decision(signaled=False, statistic=z[j])


def pewma_update(state: PewmaState, config: PewmaConfig, y) -> Tuple[PewmaState, Decision]:
    y = _as_pair(y)
    z = (config.step(0, state.z[0], float(y[0])), config.step(1, state.z[1], float(y[1])))
    return PewmaState(z=z, samples_seen=state.samples_seen + 1), _pewma_decision(config, z)


def pewma_update_stream(state: PewmaState, config: PewmaConfig, stream: int, y: float) -> Tuple[PewmaState, Decision]:
    """Advance one component only, for streams observed on their own clock."""
    if stream not in (0, 1):
        raise ConfigError(f"unknown stream index {stream}")
    z = list(state.z)
    z[stream] = config.step(stream, z[stream], float(y))
    decision = Decision(signaled=True, statistic=z[stream], source=stream) if config.crossed(stream, z[stream]) \
        else Decision(signaled=False, statistic=z[stream])
    return PewmaState(z=(z[0], z[1]), samples_seen=state.samples_seen + 1), decision


def pewma_scan_stream(z: float, config: PewmaConfig, stream: int, values: Sequence[float]) -> Tuple[float, Optional[int]]:
    """
    Run one component over `values`, stopping at its first crossing.
    Returns the statistic where it stopped and the crossing index, if any.
    """
    lam = config.lam
    keep = 1.0 - lam
    theta = float(config.theta0[stream])
    limit = float(config.limits[stream])
    if config.upper:
        for k, y in enumerate(values):
            z = lam * y + keep * z
            if z < theta:
                z = theta
            elif z > limit:
                return z, k
    else:
        for k, y in enumerate(values):
            z = lam * y + keep * z
            if z > theta:
                z = theta
            elif z < limit:
                return z, k
    return z, None


# --- Shewhart TBE ------------------------------------------------------------

@dataclass(frozen=True)
class ShewhartTbeConfig:
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper) or not lower:
            raise ConfigError("need one (lower, upper) limit pair per stream")
        for j, (lo, hi) in enumerate(zip(lower, upper)):
            if not (0.0 <= lo < hi):
                raise ConfigError(f"stream {j}: limits must satisfy 0 <= h_L < h_U, got ({lo}, {hi})")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n_streams(self) -> int:
        return len(self.lower)

    def signal_probability(self, stream: int, theta: float) -> float:
        """Per-event signal probability for an exponential stream with mean theta."""
        return math.exp(-self.upper[stream] / theta) + 1.0 - math.exp(-self.lower[stream] / theta)


def shewhart_tbe_update(config: ShewhartTbeConfig, stream: int, y: float) -> Decision:
    if not (0 <= stream < config.n_streams):
        raise ConfigError(f"unknown stream index {stream} (chart has {config.n_streams} streams)")
    if y < 0:
        raise ConfigError(f"time-between-events must be nonnegative, got {y}")
    crossed = y > config.upper[stream] or y < config.lower[stream]
    return Decision(signaled=crossed, statistic=float(y), source=stream if crossed else None)


def reset(config):
    """Initial state for a vector chart."""
    if isinstance(config, MewmaConfig):
        return mewma_init(config)
    if isinstance(config, PewmaConfig):
        return pewma_init(config)
    raise ConfigError(f"{type(config).__name__} has no vector state")


def update(state, config, y):
    """Dispatch a complete-vector update to the chart family of `config`."""
    if isinstance(config, MewmaConfig):
        return mewma_update(state, config, y)
    if isinstance(config, PewmaConfig):
        return pewma_update(state, config, y)
    raise ConfigError(f"{type(config).__name__} cannot consume complete vectors")
