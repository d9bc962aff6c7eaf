"""
Monitoring runs for the two data layouts and the alarm-time accounting.

Vector-based data: item i yields a complete vector Y_i, available only after
T_i = max_j Y_ij. A chart fed complete vectors signals at
t_A = T_1 + ... + T_{i_A}. The shift applies to items after the v-th.

Point-process data: each stream is a renewal process on a shared clock and a
Shewhart TBE chart tests every inter-event time when it completes. The shift
applies after wall-clock time tau.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import charts
from charts import (
    MewmaConfig,
    PewmaConfig,
    ShewhartTbeConfig,
    mewma_scan,
    pewma_scan_stream,
    pewma_update_stream,
    shewhart_tbe_update,
)
from errors import ConfigError, MalformedInputError
from event_log import EventRecord
from model_gumbel import GumbelBveParams, TbePair, sample_pairs

logger = logging.getLogger(__name__)

VECTOR_CAP = 10 ** 6
TIME_CAP = 1e6
BLOCK_SIZE = 256


class AlarmClock(str, Enum):
    COMPLETE_VECTOR = "complete_vector"
    PER_STREAM = "per_stream"


class Grouping(str, Enum):
    PER_STREAM = "per_stream"
    VECTOR = "vector"


@dataclass(frozen=True)
class ShiftSpec:
    multiplier1: float = 1.0
    multiplier2: float = 1.0

    def __post_init__(self):
        if not (self.multiplier1 > 0 and self.multiplier2 > 0):
            raise ConfigError(f"shift multipliers must be positive, got ({self.multiplier1}, {self.multiplier2})")

    @property
    def is_null(self) -> bool:
        return self.multiplier1 == 1.0 and self.multiplier2 == 1.0

    @property
    def label(self) -> str:
        return f"{self.multiplier1:g}x{self.multiplier2:g}"

    def apply(self, params: GumbelBveParams) -> GumbelBveParams:
        return params.scaled(self.multiplier1, self.multiplier2)


NULL_SHIFT = ShiftSpec()


def _check_change_point(value: float, name: str) -> None:
    if not (value >= 0):
        raise ConfigError(f"{name} must be nonnegative, got {value}")


@dataclass(frozen=True)
class VectorScenario:
    in_control: GumbelBveParams
    shift: ShiftSpec = NULL_SHIFT
    change_sample: float = math.inf  # last in-control item; inf = never shifts

    def __post_init__(self):
        _check_change_point(self.change_sample, "change_sample")
        if math.isfinite(self.change_sample) and self.change_sample != int(self.change_sample):
            raise ConfigError(f"change_sample must be an integer or infinity, got {self.change_sample}")

    @property
    def out_of_control(self) -> GumbelBveParams:
        return self.shift.apply(self.in_control)

    def with_change(self, change_sample: float) -> "VectorScenario":
        return VectorScenario(self.in_control, self.shift, change_sample)


@dataclass(frozen=True)
class PointProcessScenario:
    theta0: Tuple[float, ...]
    multipliers: Tuple[float, ...] = (1.0, 1.0)
    change_time: float = math.inf

    def __post_init__(self):
        theta0 = tuple(float(t) for t in self.theta0)
        multipliers = tuple(float(m) for m in self.multipliers)
        if len(theta0) != len(multipliers) or not theta0:
            raise ConfigError("need one shift multiplier per stream")
        if any(t <= 0 for t in theta0) or any(m <= 0 for m in multipliers):
            raise ConfigError("stream means and multipliers must be positive")
        _check_change_point(self.change_time, "change_time")
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "multipliers", multipliers)

    @property
    def theta1(self) -> Tuple[float, ...]:
        return tuple(t * m for t, m in zip(self.theta0, self.multipliers))

    def with_change(self, change_time: float) -> "PointProcessScenario":
        return PointProcessScenario(self.theta0, self.multipliers, change_time)


@dataclass(frozen=True)
class RunOutcome:
    signaled: bool
    i_A: int
    t_A: float
    time_from_change: Optional[float] = None
    censored: bool = False
    source: Optional[int] = None
    false_alarm: bool = False  # signal at or before the change point
    change_index: Optional[int] = None  # items observed up to the change

    def __post_init__(self):
        if self.t_A < 0:
            raise ConfigError(f"alarm time must be nonnegative, got {self.t_A}")
        if self.time_from_change is not None and self.time_from_change > self.t_A:
            raise ConfigError("time from change cannot exceed the alarm time")

    @property
    def delay(self) -> float:
        """Time counted towards the ATS: from the change when there is one."""
        return self.t_A if self.time_from_change is None else self.time_from_change

    @property
    def run_length(self) -> int:
        """Plotted statistics counted towards the ARL: after the change when there is one."""
        return self.i_A if self.change_index is None else self.i_A - self.change_index


def vector_completion_time(y: Union[TbePair, Sequence[float]]) -> float:
    if isinstance(y, TbePair):
        return max(y.y1, y.y2)
    return float(max(y))


def _draw_block(scenario: VectorScenario, rng: np.random.Generator, offset: int, n: int) -> np.ndarray:
    # items offset+1 .. offset+n; those up to change_sample are in control
    n_ic = int(min(max(scenario.change_sample - offset, 0), n))
    if n_ic == n:
        return sample_pairs(scenario.in_control, rng, n)
    if n_ic == 0:
        return sample_pairs(scenario.out_of_control, rng, n)
    return np.concatenate([
        sample_pairs(scenario.in_control, rng, n_ic),
        sample_pairs(scenario.out_of_control, rng, n - n_ic),
    ])


def run_vector_scenario(
    scenario: VectorScenario,
    chart: Union[MewmaConfig, PewmaConfig],
    rng: np.random.Generator,
    cap: int = VECTOR_CAP,
    clock: AlarmClock = AlarmClock.COMPLETE_VECTOR,
    block_size: int = BLOCK_SIZE,
) -> RunOutcome:
    """Simulate one monitoring run and account for its alarm time."""
    if cap < 1:
        raise ConfigError(f"run cap must be at least 1, got {cap}")
    clock = AlarmClock(clock)
    if clock is AlarmClock.PER_STREAM:
        if not isinstance(chart, PewmaConfig):
            raise ConfigError("the per-stream clock needs univariate component charts")
        return _run_per_stream_clock(scenario, chart, rng, cap, block_size)
    if not isinstance(chart, (MewmaConfig, PewmaConfig)):
        raise ConfigError(f"{type(chart).__name__} cannot consume complete vectors")
    return _run_complete_vector_clock(scenario, chart, rng, cap, block_size)


def _run_complete_vector_clock(scenario, chart, rng, cap, block_size) -> RunOutcome:
    state = charts.reset(chart)
    completions: List[np.ndarray] = []
    offset = 0
    hit: Optional[int] = None
    source: Optional[int] = None
    while offset < cap:
        n = min(block_size, cap - offset)
        ys = _draw_block(scenario, rng, offset, n)
        if isinstance(chart, MewmaConfig):
            state, hit = mewma_scan(state, chart, ys)
        else:
            z1, k1 = pewma_scan_stream(state.z[0], chart, 0, ys[:, 0].tolist())
            z2, k2 = pewma_scan_stream(state.z[1], chart, 1, ys[:, 1].tolist())
            state = charts.PewmaState(z=(z1, z2), samples_seen=state.samples_seen + n)
            crossings = [(k, j) for j, k in enumerate((k1, k2)) if k is not None]
            if crossings:
                hit, source = min(crossings)
        completion = ys.max(axis=1)
        if hit is not None:
            completions.append(completion[: hit + 1])
            offset += hit + 1
            break
        completions.append(completion)
        offset += n

    all_completions = np.concatenate(completions)
    t_a = math.fsum(all_completions)
    if hit is None:
        return RunOutcome(signaled=False, i_A=offset, t_A=t_a, censored=True)
    return _finish(scenario.change_sample, offset, t_a, source, lambda v: math.fsum(all_completions[:v]))


def _finish(change_sample, i_a, t_a, source, change_epoch) -> RunOutcome:
    if not math.isfinite(change_sample):
        return RunOutcome(signaled=True, i_A=i_a, t_A=t_a, source=source)
    v = int(change_sample)
    if i_a <= v:
        return RunOutcome(signaled=True, i_A=i_a, t_A=t_a, source=source, false_alarm=True)
    return RunOutcome(
        signaled=True, i_A=i_a, t_A=t_a, source=source, time_from_change=t_a - change_epoch(v), change_index=v,
    )


def _run_per_stream_clock(scenario, chart: PewmaConfig, rng, cap, block_size) -> RunOutcome:
    """
    Each component chart runs on its own stream's clock T_kj = Y_1j + ... + Y_kj.
    The run ends at the earliest crossing time over streams; sampling continues
    until no stream that has not crossed can still cross earlier.
    """
    z = [float(chart.theta0[0]), float(chart.theta0[1])]
    columns: List[List[np.ndarray]] = [[], []]
    crossing: List[Optional[int]] = [None, None]
    offset = 0
    best = math.inf
    while offset < cap:
        n = min(block_size, cap - offset)
        ys = _draw_block(scenario, rng, offset, n)
        for j in (0, 1):
            columns[j].append(ys[:, j])
            if crossing[j] is None:
                z[j], k = pewma_scan_stream(z[j], chart, j, ys[:, j].tolist())
                if k is not None:
                    crossing[j] = offset + k + 1
                    best = min(best, math.fsum(np.concatenate(columns[j])[: crossing[j]]))
        offset += n
        if math.isfinite(best) and all(
            crossing[j] is not None or math.fsum(np.concatenate(columns[j])) >= best for j in (0, 1)
        ):
            break

    stacked = [np.concatenate(c) for c in columns]
    if not math.isfinite(best):
        return RunOutcome(signaled=False, i_A=offset, t_A=max(math.fsum(c) for c in stacked), censored=True)
    times = [math.fsum(stacked[j][: crossing[j]]) if crossing[j] is not None else math.inf for j in (0, 1)]
    source = 0 if times[0] <= times[1] else 1
    return _finish(
        scenario.change_sample, crossing[source], times[source], source,
        lambda v: math.fsum(stacked[source][:v]),
    )


def run_point_process_scenario(
    scenario: PointProcessScenario,
    chart: ShewhartTbeConfig,
    rng: np.random.Generator,
    cap: float = TIME_CAP,
) -> RunOutcome:
    """
    Independent exponential renewal streams, each inter-event time tested by a
    Shewhart TBE chart when it completes. An interval straddling the change
    time is completed by a fresh draw at the shifted mean (memorylessness).
    """
    if not cap > 0:
        raise ConfigError(f"time cap must be positive, got {cap}")
    if chart.n_streams != len(scenario.theta0):
        raise ConfigError(f"chart monitors {chart.n_streams} streams, scenario has {len(scenario.theta0)}")
    tau = scenario.change_time
    best = math.inf
    best_stream: Optional[int] = None
    best_index = 0
    best_before = 0
    for j, (theta0, theta1) in enumerate(zip(scenario.theta0, scenario.theta1)):
        last = 0.0
        k = 0
        before = 0
        while True:
            mean = theta0 if last < tau else theta1
            y = rng.standard_exponential() * mean
            if last < tau < last + y:
                y = (tau - last) + rng.standard_exponential() * theta1
            event = last + y
            if event >= min(best, cap):
                break
            k += 1
            if event <= tau:
                before += 1
            if shewhart_tbe_update(chart, j, y).signaled:
                best, best_stream, best_index, best_before = event, j, k, before
                break
            last = event

    if best_stream is None:
        return RunOutcome(signaled=False, i_A=0, t_A=float(cap), censored=True)
    if not math.isfinite(tau):
        return RunOutcome(signaled=True, i_A=best_index, t_A=best, source=best_stream)
    if best <= tau:
        return RunOutcome(signaled=True, i_A=best_index, t_A=best, source=best_stream, false_alarm=True)
    return RunOutcome(
        signaled=True, i_A=best_index, t_A=best, source=best_stream, time_from_change=best - tau,
        change_index=best_before,
    )


# --- replay of recorded event logs -------------------------------------------

@dataclass(frozen=True)
class AlarmRecord:
    timestamp: float
    index: int  # plotted statistics since the chart (re)started
    statistic: float
    source: Optional[str] = None


def _normalise_log(log, streams: Sequence[str]) -> List[EventRecord]:
    allowed = set(streams)
    records = []
    last = -math.inf
    for position, entry in enumerate(log, start=1):
        record = entry if isinstance(entry, EventRecord) else EventRecord(float(entry[0]), str(entry[1]), position)
        line_no = record.line_no if record.line_no is not None else position
        if record.timestamp < last:
            raise MalformedInputError(f"timestamp {record.timestamp} is earlier than the previous event", line_no)
        if record.stream not in allowed:
            raise MalformedInputError(f"unknown stream id {record.stream!r}", line_no)
        last = record.timestamp
        records.append(record)
    return records


def replay_event_log(
    log: Sequence[Union[EventRecord, Tuple[float, str]]],
    chart: Union[MewmaConfig, PewmaConfig, ShewhartTbeConfig],
    grouping: Grouping,
    streams: Sequence[str] = ("1", "2"),
) -> List[AlarmRecord]:
    """
    Run a chart over a recorded log and return every alarm. The chart restarts
    from its initial state after each alarm.

    per_stream: each stream's successive inter-event times (the first measured
    from time 0) go to that stream's chart as they complete.
    vector: one event per stream forms a vector, each component measured from
    the completion of the previous vector; the vector is plotted when its last
    component arrives. Extra events for a filled slot queue for the next vector.
    """
    grouping = Grouping(grouping)
    records = _normalise_log(log, streams)
    index_of: Dict[str, int] = {s: j for j, s in enumerate(streams)}
    if grouping is Grouping.PER_STREAM:
        return _replay_per_stream(records, chart, streams, index_of)
    return _replay_vectors(records, chart, streams, index_of)


def _replay_per_stream(records, chart, streams, index_of) -> List[AlarmRecord]:
    if isinstance(chart, MewmaConfig):
        raise ConfigError("the MEWMA chart needs complete vectors; use vector grouping")
    if isinstance(chart, ShewhartTbeConfig) and chart.n_streams != len(streams):
        raise ConfigError(f"chart monitors {chart.n_streams} streams, log declares {len(streams)}")
    if isinstance(chart, PewmaConfig) and len(streams) != 2:
        raise ConfigError("paired EWMA monitors exactly two streams")
    alarms: List[AlarmRecord] = []
    last = [0.0] * len(streams)
    state = charts.pewma_init(chart) if isinstance(chart, PewmaConfig) else None
    plotted = 0
    for record in records:
        j = index_of[record.stream]
        y = record.timestamp - last[j]
        last[j] = record.timestamp
        plotted += 1
        if state is None:
            decision = shewhart_tbe_update(chart, j, y)
        else:
            state, decision = pewma_update_stream(state, chart, j, y)
        if decision.signaled:
            alarms.append(AlarmRecord(record.timestamp, plotted, decision.statistic, streams[j]))
            logger.debug("alarm at t=%g on stream %s", record.timestamp, streams[j])
            plotted = 0
            if state is not None:
                state = charts.pewma_init(chart)
    return alarms


def _replay_vectors(records, chart, streams, index_of) -> List[AlarmRecord]:
    if isinstance(chart, ShewhartTbeConfig):
        raise ConfigError("the Shewhart TBE chart tests single streams; use per-stream grouping")
    if len(streams) != 2:
        raise ConfigError("vector charts are bivariate: declare exactly two streams")
    alarms: List[AlarmRecord] = []
    state = charts.reset(chart)
    slots: List[Optional[float]] = [None, None]
    queued: List[Deque[float]] = [deque(), deque()]
    start = 0.0
    plotted = 0
    for record in records:
        j = index_of[record.stream]
        if slots[j] is None:
            slots[j] = record.timestamp
        else:
            queued[j].append(record.timestamp)
        while all(s is not None for s in slots):
            completed_at = max(slots)
            y = [max(0.0, s - start) for s in slots]
            state, decision = charts.update(state, chart, y)
            plotted += 1
            if decision.signaled:
                source = streams[decision.source] if decision.source is not None else None
                alarms.append(AlarmRecord(completed_at, plotted, decision.statistic, source))
                logger.debug("alarm at t=%g after %d vectors", completed_at, plotted)
                state = charts.reset(chart)
                plotted = 0
            start = completed_at
            slots = [q.popleft() if q else None for q in queued]
    return alarms
