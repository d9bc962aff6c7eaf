"""
Plain-text event logs: one `timestamp,stream_id` per line, timestamps in
decimal seconds, `#` comments and blank lines ignored, UTF-8.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import MalformedInputError


@dataclass(frozen=True)
class EventRecord:
    timestamp: float
    stream: str
    line_no: Optional[int] = None


def parse_event_log(lines: Iterable[str], streams: Optional[Sequence[str]] = None) -> List[EventRecord]:
    """Parse and validate log lines. Timestamps must be nondecreasing."""
    allowed = set(streams) if streams is not None else None
    events: List[EventRecord] = []
    last = -math.inf
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2 or not parts[1]:
            raise MalformedInputError(f"expected 'timestamp,stream_id', got {line!r}", line_no)
        try:
            timestamp = float(parts[0])
        except ValueError:
            raise MalformedInputError(f"timestamp {parts[0]!r} is not a number", line_no) from None
        if not math.isfinite(timestamp) or timestamp < 0:
            raise MalformedInputError(f"timestamp must be finite and nonnegative, got {parts[0]}", line_no)
        if timestamp < last:
            raise MalformedInputError(f"timestamp {timestamp} is earlier than the previous event ({last})", line_no)
        if allowed is not None and parts[1] not in allowed:
            raise MalformedInputError(f"unknown stream id {parts[1]!r}", line_no)
        events.append(EventRecord(timestamp, parts[1], line_no))
        last = timestamp
    return events


def read_event_log(path: Union[str, Path], streams: Optional[Sequence[str]] = None) -> List[EventRecord]:
    with open(path, encoding="utf-8") as f:
        return parse_event_log(f, streams)


def format_event_log(events: Iterable[Tuple[float, str]]) -> str:
    return "".join(f"{t!r},{stream}\n" for t, stream in events)


def write_event_log(events: Iterable[Tuple[float, str]], path: Union[str, Path]) -> None:
    Path(path).write_text(format_event_log(events), encoding="utf-8")


def vector_pairs_to_log(pairs: np.ndarray, streams: Sequence[str] = ("1", "2")) -> List[Tuple[float, str]]:
    """
    Lay complete vectors end to end on one clock: every component of vector i
    is measured from the completion of vector i - 1.
    """
    events: List[Tuple[float, str]] = []
    start = 0.0
    for row in np.asarray(pairs, dtype=float):
        arrivals = sorted(((start + float(y), stream) for y, stream in zip(row, streams)), key=lambda e: e[0])
        events.extend(arrivals)
        start = arrivals[-1][0]
    return events
