"""
Monte Carlo ATS estimation and control-limit calibration.

Run r of an estimate draws from np.random.default_rng(SeedSequence([seed, r, attempt])),
so every run depends only on (seed, r) and the estimate is the same for any
number of workers. Results are gathered in run order and reduced with math.fsum.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from charts import Direction, MewmaConfig, PewmaConfig, ShewhartTbeConfig
from errors import CalibrationError, ConfigError, EstimateInvalidError
from model_gumbel import GumbelBveParams
from scenarios import (
    TIME_CAP,
    VECTOR_CAP,
    AlarmClock,
    PointProcessScenario,
    RunOutcome,
    VectorScenario,
    run_point_process_scenario,
    run_vector_scenario,
)

logger = logging.getLogger(__name__)

MAX_CENSORED_FRACTION = 0.001
CHUNK_SIZE = 1000


class Mode(str, Enum):
    ZERO_STATE = "zero_state"
    STEADY_STATE = "steady_state"
    IN_CONTROL = "in_control"


class ChartFamily(str, Enum):
    MEWMA = "mewma"
    PEWMA = "pewma"
    SHEWHART = "shewhart"


@dataclass(frozen=True)
class SteadyStateConfig:
    burn_in: int = 50  # in-control items before the shift
    burn_in_time: float = 50.0  # point-process equivalent, in time units
    discard_policy: str = "discard_and_regenerate"
    max_attempts: int = 10_000

    def __post_init__(self):
        if self.burn_in < 0 or self.burn_in_time < 0:
            raise ConfigError("burn-in must be nonnegative")
        if self.discard_policy != "discard_and_regenerate":
            raise ConfigError(f"unsupported discard policy {self.discard_policy!r}")


@dataclass(frozen=True)
class AtsEstimate:
    mean_ats: float
    std_error: float
    n_runs: int
    n_discarded: int = 0
    n_censored: int = 0
    mean_run_length: float = math.nan  # ARL diagnostic: mean statistics plotted after the change

    @property
    def std_error_defined(self) -> bool:
        return self.n_runs > 1

    @property
    def censored_fraction(self) -> float:
        return self.n_censored / self.n_runs

    def is_valid(self, max_censored_fraction: float = MAX_CENSORED_FRACTION) -> bool:
        return self.censored_fraction <= max_censored_fraction


@dataclass(frozen=True)
class CalibrationResult:
    family: ChartFamily
    direction: Direction
    lam: float
    limit: float  # h for MEWMA, proportional scale c for PEWMA
    limits: Tuple[float, ...]
    achieved_ats0: float
    std_error: float
    iterations: int
    reps_per_eval: int
    n_reps: int
    within_tolerance: bool = True
    history: Tuple[Tuple[float, float], ...] = field(default=(), repr=False)

    @property
    def limit_spec(self) -> str:
        if self.family is ChartFamily.MEWMA:
            return f"h={self.limits[0]:.4g}"
        name = "U" if self.direction is Direction.UPPER else "L"
        return " ".join(f"{name}{j + 1}={v:.4g}" for j, v in enumerate(self.limits))


def run_rng(base_seed: int, run_index: int, attempt: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([base_seed, run_index, attempt]))


Scenario = Union[VectorScenario, PointProcessScenario]
Chart = Union[MewmaConfig, PewmaConfig, ShewhartTbeConfig]


@dataclass(frozen=True)
class _RunTask:
    scenario: Scenario
    chart: Chart
    base_seed: int
    discard_false_alarms: bool
    clock: AlarmClock
    cap: float
    max_attempts: int

    def run(self, run_index: int) -> Tuple[RunOutcome, int]:
        attempt = 0
        while True:
            rng = run_rng(self.base_seed, run_index, attempt)
            if isinstance(self.scenario, PointProcessScenario):
                outcome = run_point_process_scenario(self.scenario, self.chart, rng, cap=self.cap)
            else:
                outcome = run_vector_scenario(self.scenario, self.chart, rng, cap=int(self.cap), clock=self.clock)
            if not (self.discard_false_alarms and outcome.false_alarm):
                return outcome, attempt
            attempt += 1
            if attempt >= self.max_attempts:
                raise EstimateInvalidError(
                    f"run {run_index}: {attempt} consecutive false alarms during burn-in"
                )


def _run_chunk(task: _RunTask, start: int, stop: int, max_censored: float = math.inf) -> np.ndarray:
    """
    Columns: delay, run length, censored flag, discarded attempts. Stops early
    once the chunk alone holds more than `max_censored` censored runs.
    """
    out = np.empty((stop - start, 4))
    censored = 0
    for row, run_index in enumerate(range(start, stop)):
        outcome, discarded = task.run(run_index)
        out[row] = (outcome.delay, outcome.run_length, outcome.censored, discarded)
        censored += outcome.censored
        if censored > max_censored:
            return out[: row + 1]
    return out


def _simulate(task: _RunTask, n_reps: int, workers: int, max_censored: float = math.inf) -> np.ndarray:
    """
    Rows in run order. Chunks are gathered in order and gathering stops at the
    first chunk that takes the censored count above `max_censored`, so the
    rows returned do not depend on the worker count.
    """
    bounds = [(s, min(s + CHUNK_SIZE, n_reps)) for s in range(0, n_reps, CHUNK_SIZE)]
    parts: List[np.ndarray] = []
    censored = 0.0

    def keep(part: np.ndarray) -> bool:
        nonlocal censored
        parts.append(part)
        censored += part[:, 2].sum()
        return censored <= max_censored

    if workers <= 1 or len(bounds) == 1:
        for s, e in bounds:
            if not keep(_run_chunk(task, s, e, max_censored)):
                break
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_run_chunk, task, s, e, max_censored) for s, e in bounds]
            for future in futures:
                if not keep(future.result()):
                    for pending in futures:
                        pending.cancel()
                    break
    return np.concatenate(parts)


def _summarise(results: np.ndarray) -> AtsEstimate:
    n = len(results)
    delays = results[:, 0]
    return AtsEstimate(
        mean_ats=math.fsum(delays) / n,
        std_error=float(np.std(delays, ddof=1) / math.sqrt(n)) if n > 1 else math.nan,
        n_runs=n,
        n_discarded=int(results[:, 3].sum()),
        n_censored=int(results[:, 2].sum()),
        mean_run_length=math.fsum(results[:, 1]) / n,
    )


def _place_change(scenario: Scenario, mode: Mode, steady: SteadyStateConfig) -> Scenario:
    if isinstance(scenario, PointProcessScenario):
        change = {Mode.ZERO_STATE: 0.0, Mode.STEADY_STATE: steady.burn_in_time, Mode.IN_CONTROL: math.inf}[mode]
    else:
        change = {Mode.ZERO_STATE: 0, Mode.STEADY_STATE: steady.burn_in, Mode.IN_CONTROL: math.inf}[mode]
    return scenario.with_change(change)


def estimate_ats(
    scenario: Scenario,
    chart: Chart,
    mode: Mode = Mode.STEADY_STATE,
    n_reps: int = 100_000,
    base_seed: int = 0,
    steady: SteadyStateConfig = SteadyStateConfig(),
    clock: AlarmClock = AlarmClock.COMPLETE_VECTOR,
    workers: int = 1,
    cap: Optional[float] = None,
    max_censored_fraction: float = MAX_CENSORED_FRACTION,
) -> AtsEstimate:
    """
    Average time to signal over n_reps independent runs.

    zero_state: the change is in place from the first observation; averages t_A.
    steady_state: the change follows the burn-in; runs that signal during the
    burn-in are discarded and regenerated; averages the time from the change.
    in_control: no change; averages t_A.

    Raises EstimateInvalidError as soon as more than `max_censored_fraction`
    of the n_reps runs have hit the cap; the error carries the runs done so far.
    """
    if n_reps < 1:
        raise ConfigError(f"n_reps must be at least 1, got {n_reps}")
    mode = Mode(mode)
    if cap is None:
        cap = TIME_CAP if isinstance(scenario, PointProcessScenario) else VECTOR_CAP
    task = _RunTask(
        scenario=_place_change(scenario, mode, steady),
        chart=chart,
        base_seed=base_seed,
        discard_false_alarms=mode is Mode.STEADY_STATE,
        clock=AlarmClock(clock),
        cap=cap,
        max_attempts=steady.max_attempts,
    )
    max_censored = max_censored_fraction * n_reps
    estimate = _summarise(_simulate(task, n_reps, workers, max_censored))
    logger.debug(
        "ATS %.4f (se %.4f) over %d runs, %d discarded, %d censored",
        estimate.mean_ats, estimate.std_error, estimate.n_runs, estimate.n_discarded, estimate.n_censored,
    )
    if estimate.n_censored > max_censored:
        raise EstimateInvalidError(
            f"{estimate.n_censored} censored runs after {estimate.n_runs} of {n_reps} "
            f"(allowed {max_censored_fraction:.2%} of {n_reps})",
            estimate,
        )
    return estimate


def ats_wald_oracle(theta0: float, lower: float, upper: float) -> float:
    """Exact in-control ATS of a single exponential stream under a Shewhart TBE chart."""
    p = math.exp(-upper / theta0) + 1.0 - math.exp(-lower / theta0)
    return theta0 / p


# --- calibration ---------------------------------------------------------------

def build_chart(
    family: ChartFamily,
    params: GumbelBveParams,
    lam: float,
    limit: float,
    direction: Direction = Direction.UPPER,
) -> Union[MewmaConfig, PewmaConfig]:
    family = ChartFamily(family)
    if family is ChartFamily.MEWMA:
        return MewmaConfig.from_model(params, lam, limit)
    if family is ChartFamily.PEWMA:
        return PewmaConfig.from_scale(params.theta, lam, Direction(direction), limit)
    raise ConfigError("calibration covers the MEWMA and paired EWMA charts")


def _limit_transform(family: ChartFamily, direction: Direction) -> Callable[[float], float]:
    """
    Map an unconstrained u to a limit so that ATS_0 increases with u. A unit
    step in u multiplies h, c - 1 (upper) or 1/c - 1 (lower) by e.
    """
    if family is ChartFamily.MEWMA:
        return math.exp
    if direction is Direction.UPPER:
        return lambda u: 1.0 + math.exp(u)
    return lambda u: 1.0 / (1.0 + math.exp(u))


def _in_domain(family: ChartFamily, direction: Direction, limit: float) -> bool:
    if not math.isfinite(limit):
        return False
    if family is ChartFamily.MEWMA:
        return limit > 0
    return limit > 1.0 if direction is Direction.UPPER else 0.0 < limit < 1.0


def _initial_u(family: ChartFamily, direction: Direction) -> float:
    # h = 10; c = 1.5 (upper) or c = 0.5 (lower)
    if family is ChartFamily.MEWMA:
        return math.log(10.0)
    return math.log(0.5) if direction is Direction.UPPER else 0.0


def calibrate(
    in_control: GumbelBveParams,
    family: ChartFamily,
    lam: float,
    target_ats0: float = 200.0,
    rel_tol: float = 0.01,
    reps_per_eval: int = 20_000,
    base_seed: int = 0,
    direction: Direction = Direction.UPPER,
    n_reps: int = 100_000,
    mode: Mode = Mode.STEADY_STATE,
    steady: SteadyStateConfig = SteadyStateConfig(),
    clock: AlarmClock = AlarmClock.COMPLETE_VECTOR,
    workers: int = 1,
    max_expansions: int = 60,
    max_iterations: int = 60,
    initial_limit: Optional[float] = None,
) -> CalibrationResult:
    """
    Find the chart limit whose in-control ATS equals `target_ats0`.

    Monotone stochastic bisection on one scalar: h for MEWMA, the proportional
    scale c (limits c * theta_0j) for the paired charts. Every evaluation reuses
    the same seeds, so successive estimates share their random numbers. The
    bracket doubles h, c - 1 (upper) or 1/c - 1 (lower) until it straddles the
    target and fails with CalibrationError if the limit would leave its range.
    The chosen limit is re-estimated with n_reps runs.
    """
    family = ChartFamily(family)
    direction = Direction(direction)
    if not target_ats0 > 0:
        raise ConfigError(f"target ATS must be positive, got {target_ats0}")
    if not (0 < rel_tol <= 0.1):
        raise ConfigError(f"rel_tol must lie in (0, 0.1], got {rel_tol}")
    to_limit = _limit_transform(family, direction)
    scenario = VectorScenario(in_control)
    history: List[Tuple[float, float]] = []

    def evaluate(u: float, reps: int) -> float:
        limit = to_limit(u)
        chart = build_chart(family, in_control, lam, limit, direction)
        try:
            estimate = estimate_ats(scenario, chart, mode, reps, base_seed, steady, clock, workers)
        except EstimateInvalidError as e:
            # censored runs carry an estimate; exhausted burn-in attempts do not
            ats = math.inf if e.estimate is not None else 0.0
            logger.info("limit %.6g: %s; treating ATS as %s target", limit, e, "above" if ats else "below")
            history.append((limit, ats))
            return ats
        history.append((limit, estimate.mean_ats))
        logger.info("limit %.6g -> ATS %.3f (se %.3f)", limit, estimate.mean_ats, estimate.std_error)
        return estimate.mean_ats

    if initial_limit is not None:
        u0 = _limit_to_u(family, direction, initial_limit)
    else:
        u0 = _initial_u(family, direction)
    tol = rel_tol * target_ats0
    iterations = 1
    value = evaluate(u0, reps_per_eval)
    best_u, best_gap = u0, abs(value - target_ats0)

    if abs(value - target_ats0) <= tol:
        lo = hi = u0
    else:
        step = math.log(2.0)
        lo = hi = u0
        upward = value < target_ats0
        for _ in range(max_expansions):
            previous = hi if upward else lo
            candidate = previous + (step if upward else -step)
            try:
                limit = to_limit(candidate)
            except OverflowError:
                limit = math.inf
            if not _in_domain(family, direction, limit) or limit == to_limit(previous):
                raise _bracketing_error(
                    f"limit left its valid range while bracketing target ATS {target_ats0}", history,
                )
            iterations += 1
            value = evaluate(candidate, reps_per_eval)
            if abs(value - target_ats0) < best_gap:
                best_u, best_gap = candidate, abs(value - target_ats0)
            if upward:
                lo, hi = hi, candidate
                if value >= target_ats0:
                    break
            else:
                hi, lo = lo, candidate
                if value <= target_ats0:
                    break
        else:
            raise _bracketing_error(
                f"could not bracket target ATS {target_ats0} within {max_expansions} expansions", history,
            )

        for _ in range(max_iterations):
            if best_gap <= tol:
                break
            iterations += 1
            mid = 0.5 * (lo + hi)
            value = evaluate(mid, reps_per_eval)
            if abs(value - target_ats0) < best_gap:
                best_u, best_gap = mid, abs(value - target_ats0)
            if value < target_ats0:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-9:
                break

    limit = to_limit(best_u)
    chart = build_chart(family, in_control, lam, limit, direction)
    final = estimate_ats(scenario, chart, mode, n_reps, base_seed + 1, steady, clock, workers)
    slack = tol + 2.0 * (final.std_error if final.std_error_defined else 0.0)
    within = abs(final.mean_ats - target_ats0) <= slack
    if not within:
        logger.warning(
            "validated ATS %.3f misses target %.1f by more than %.3f", final.mean_ats, target_ats0, slack
        )
    limits = (limit,) if family is ChartFamily.MEWMA else tuple(float(v) for v in chart.limits)
    return CalibrationResult(
        family=family,
        direction=direction,
        lam=lam,
        limit=limit,
        limits=limits,
        achieved_ats0=final.mean_ats,
        std_error=final.std_error,
        iterations=iterations,
        reps_per_eval=reps_per_eval,
        n_reps=n_reps,
        within_tolerance=within,
        history=tuple(history),
    )


def _bracketing_error(message: str, history: List[Tuple[float, float]]) -> CalibrationError:
    seen = [a for _, a in history if 0 < a < math.inf] or [math.nan]
    return CalibrationError(message, (min(seen), max(seen)))


def _limit_to_u(family: ChartFamily, direction: Direction, limit: float) -> float:
    if family is ChartFamily.MEWMA:
        if limit <= 0:
            raise ConfigError("initial h must be positive")
        return math.log(limit)
    if direction is Direction.UPPER:
        if limit <= 1:
            raise ConfigError("initial upper scale must exceed 1")
        return math.log(limit - 1.0)
    if not 0 < limit < 1:
        raise ConfigError("initial lower scale must lie in (0, 1)")
    return math.log(1.0 / limit - 1.0)
