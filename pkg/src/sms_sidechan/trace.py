"""SMS timing records, trace CSV reading/writing, filtering and summaries.

A trace is a flat list of transmissions grouped into bursts. Each row carries
the three sender-side timestamps (transmit, Sent notification, Delivered
notification) in integer milliseconds since the Unix epoch, plus the labels
describing where and how the receiver was reached.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Iterable, Iterator, Mapping, Sequence

from .exceptions import MalformedRow, TimestampOrderViolation, UnknownEnum

TRACE_HEADER = (
    "burst_id",
    "seq",
    "t_tx_ms",
    "t_sent_ms",
    "t_del_ms",
    "status",
    "location",
    "operator",
    "device",
    "routing",
    "connection",
    "distance_km",
)

STATUSES = frozenset({"Sent", "Delivered", "Failed"})
ROUTINGS = frozenset({"SMSoIP", "SGsAP_Diameter", "SMSoNAS"})
CONNECTIONS = frozenset({"LTE", "LTE_plus", "NR_NSA", "NR_SA"})

HOUR_MS = 3_600_000
DAY_MS = 24 * HOUR_MS


def utc_hour(t_ms: int) -> int:
    return (t_ms // HOUR_MS) % 24


def utc_weekday(t_ms: int) -> int:
    """Day of week of a millisecond timestamp, Monday = 0 (UTC)."""
    # 1970-01-01 was a Thursday.
    return (t_ms // DAY_MS + 3) % 7


@dataclass(frozen=True, slots=True)
class TimingRecord:
    burst_id: int
    seq: int
    t_tx: int
    t_sent: int | None
    t_del: int | None
    status: str
    location: str
    operator: str
    device: str
    routing: str
    connection: str
    distance_km: float | None = None

    def check(self) -> None:
        """Raise ``ValueError`` if the record breaks a structural invariant."""
        if self.burst_id < 0 or self.seq < 0:
            raise ValueError("burst_id and seq must be >= 0")
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.routing not in ROUTINGS:
            raise ValueError(f"unknown routing {self.routing!r}")
        if self.connection not in CONNECTIONS:
            raise ValueError(f"unknown connection {self.connection!r}")
        if (self.status == "Delivered") != (self.t_del is not None):
            raise ValueError("t_del must be present exactly when status is Delivered")
        if self.status in ("Sent", "Delivered") and self.t_sent is None:
            raise ValueError(f"status {self.status} requires t_sent")
        if self.t_sent is not None and self.t_sent < self.t_tx:
            raise ValueError("t_sent precedes t_tx")
        if self.t_del is not None:
            lower = self.t_sent if self.t_sent is not None else self.t_tx
            if self.t_del < lower:
                raise ValueError("t_del precedes t_sent")
        if self.distance_km is not None and not self.distance_km >= 0:
            raise ValueError("distance_km must be nonnegative")

    @property
    def labels(self) -> tuple[str, str, str]:
        return (self.location, self.operator, self.device)


@dataclass(frozen=True)
class TraceDataset:
    records: tuple[TimingRecord, ...]
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        records = tuple(sorted(self.records, key=lambda r: (r.burst_id, r.seq)))
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TimingRecord]:
        return iter(self.records)

    def vocabulary(self, field_name: str) -> list[str]:
        return sorted({getattr(r, field_name) for r in self.records})


@dataclass(frozen=True)
class Selector:
    """Conjunctive record filter. ``None`` fields match everything.

    ``hours`` holds half-open ``(start, end)`` hour-of-day ranges, ``days`` holds
    weekday numbers (Monday = 0) and ``date_range`` is a half-open millisecond
    interval on ``t_tx``. All times are UTC.
    """

    locations: frozenset[str] | None = None
    operators: frozenset[str] | None = None
    devices: frozenset[str] | None = None
    routings: frozenset[str] | None = None
    days: frozenset[int] | None = None
    hours: tuple[tuple[int, int], ...] | None = None
    date_range: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        for name in ("locations", "operators", "devices", "routings", "days"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, frozenset):
                object.__setattr__(self, name, frozenset(value))
        if self.hours is not None:
            hours = tuple((int(a), int(b)) for a, b in self.hours)
            for a, b in hours:
                if not (0 <= a < b <= 24):
                    raise ValueError(f"hour range ({a}, {b}) not within [0, 24)")
            object.__setattr__(self, "hours", hours)

    def matches(self, rec) -> bool:
        if self.locations is not None and rec.location not in self.locations:
            return False
        if self.operators is not None and rec.operator not in self.operators:
            return False
        if self.devices is not None and rec.device not in self.devices:
            return False
        if self.routings is not None and getattr(rec, "routing", None) not in self.routings:
            return False
        t = rec.t_tx
        if self.days is not None and utc_weekday(t) not in self.days:
            return False
        if self.hours is not None:
            h = utc_hour(t)
            if not any(a <= h < b for a, b in self.hours):
                return False
        if self.date_range is not None and not (self.date_range[0] <= t < self.date_range[1]):
            return False
        return True

    def __and__(self, other: Selector) -> Selector:
        def both(a, b):
            if a is None:
                return b
            if b is None:
                return a
            return a & b

        hours = self.hours
        if other.hours is not None:
            if hours is None:
                hours = other.hours
            else:
                hours = tuple(
                    (max(a, c), min(b, d))
                    for a, b in hours
                    for c, d in other.hours
                    if max(a, c) < min(b, d)
                ) or ((0, 0),)
        date_range = self.date_range
        if other.date_range is not None:
            if date_range is None:
                date_range = other.date_range
            else:
                date_range = (
                    max(date_range[0], other.date_range[0]),
                    min(date_range[1], other.date_range[1]),
                )
        sel = Selector(
            locations=both(self.locations, other.locations),
            operators=both(self.operators, other.operators),
            devices=both(self.devices, other.devices),
            routings=both(self.routings, other.routings),
            days=both(self.days, other.days),
            date_range=date_range,
        )
        # (0, 0) is an empty range that the constructor would reject
        object.__setattr__(sel, "hours", hours)
        return sel

    def describe(self) -> dict:
        out = {}
        for name in ("locations", "operators", "devices", "routings", "days"):
            value = getattr(self, name)
            if value is not None:
                out[name] = sorted(value)
        if self.hours is not None:
            out["hours"] = [list(h) for h in self.hours]
        if self.date_range is not None:
            out["date_range"] = list(self.date_range)
        return out


# -- CSV ---------------------------------------------------------------------


def _int_field(value: str, line: int, name: str, optional: bool = False) -> int | None:
    value = value.strip()
    if value == "":
        if optional:
            return None
        raise MalformedRow(line, f"missing {name}")
    try:
        return int(value)
    except ValueError:
        raise MalformedRow(line, f"{name} is not an integer: {value!r}") from None


def _parse_row(row: Sequence[str], line: int) -> TimingRecord:
    if len(row) != len(TRACE_HEADER):
        raise MalformedRow(line, f"expected {len(TRACE_HEADER)} fields, got {len(row)}")
    burst_id = _int_field(row[0], line, "burst_id")
    seq = _int_field(row[1], line, "seq")
    t_tx = _int_field(row[2], line, "t_tx_ms")
    t_sent = _int_field(row[3], line, "t_sent_ms", optional=True)
    t_del = _int_field(row[4], line, "t_del_ms", optional=True)
    status, location, operator, device, routing, connection = (v.strip() for v in row[5:11])
    if burst_id < 0 or seq < 0:
        raise MalformedRow(line, "burst_id and seq must be >= 0")
    for name, value, allowed in (
        ("status", status, STATUSES),
        ("routing", routing, ROUTINGS),
        ("connection", connection, CONNECTIONS),
    ):
        if value not in allowed:
            raise UnknownEnum(line, name, value)
    for name, value in (("location", location), ("operator", operator), ("device", device)):
        if value == "":
            raise MalformedRow(line, f"missing {name}")
    dist_raw = row[11].strip()
    distance = None
    if dist_raw:
        try:
            distance = float(dist_raw)
        except ValueError:
            raise MalformedRow(line, f"distance_km is not a number: {dist_raw!r}") from None
        if not distance >= 0 or distance == float("inf"):
            raise MalformedRow(line, "distance_km must be finite and nonnegative")

    if status == "Delivered" and t_del is None:
        raise MalformedRow(line, "Delivered row without t_del_ms")
    if status != "Delivered" and t_del is not None:
        raise MalformedRow(line, f"{status} row carries t_del_ms")
    if status in ("Sent", "Delivered") and t_sent is None:
        raise MalformedRow(line, f"{status} row without t_sent_ms")
    if t_sent is not None and t_sent < t_tx:
        raise TimestampOrderViolation(line, "t_sent_ms precedes t_tx_ms")
    if t_del is not None and t_sent is not None and t_del < t_sent:
        raise TimestampOrderViolation(line, "t_del_ms precedes t_sent_ms")

    return TimingRecord(
        burst_id, seq, t_tx, t_sent, t_del, status,
        location, operator, device, routing, connection, distance,
    )


def parse_trace_csv(stream: IO[bytes] | IO[str] | bytes | str, meta: Mapping | None = None) -> TraceDataset:
    """Read a trace CSV into a validated, sorted :class:`TraceDataset`.

    ``stream`` may be a binary or text file object, or the raw content.
    Line numbers in raised errors are 1-based and count the header as line 1.
    """
    if isinstance(stream, bytes):
        text = stream.decode("utf-8")
    elif isinstance(stream, str):
        text = stream
    else:
        data = stream.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedRow(1, "empty input, header expected") from None
    if tuple(h.strip() for h in header) != TRACE_HEADER:
        raise MalformedRow(1, "unexpected header")
    records = []
    seen = set()
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        rec = _parse_row(row, line)
        key = (rec.burst_id, rec.seq)
        if key in seen:
            raise MalformedRow(line, f"duplicate (burst_id, seq) = {key}")
        seen.add(key)
        records.append(rec)
    return TraceDataset(tuple(records), dict(meta or {}))


def read_trace(path) -> TraceDataset:
    with open(path, "rb") as fh:
        return parse_trace_csv(fh, meta={"source": str(path)})


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_trace_csv(records: Iterable[TimingRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for r in records:
        writer.writerow([
            r.burst_id, r.seq, r.t_tx, _fmt(r.t_sent), _fmt(r.t_del), r.status,
            r.location, r.operator, r.device, r.routing, r.connection, _fmt(r.distance_km),
        ])
    return buf.getvalue()


# -- selection and summaries -------------------------------------------------


def filter_dataset(dataset: TraceDataset, sel: Selector) -> TraceDataset:
    records = tuple(r for r in dataset.records if sel.matches(r))
    meta = dict(dataset.meta)
    meta["selectors"] = list(meta.get("selectors", [])) + [sel.describe()]
    return TraceDataset(records, meta)


def summarize(dataset: TraceDataset) -> dict:
    """Counts per (location, operator, device), failure rate and time span."""
    counts = Counter(r.labels for r in dataset.records)
    statuses = Counter(r.status for r in dataset.records)
    n = len(dataset.records)
    span = None
    if n:
        t = [r.t_tx for r in dataset.records]
        span = {
            "first_t_tx_ms": min(t),
            "last_t_tx_ms": max(t),
            "first_utc": datetime.fromtimestamp(min(t) / 1000, timezone.utc).isoformat(),
            "last_utc": datetime.fromtimestamp(max(t) / 1000, timezone.utc).isoformat(),
        }
    return {
        "records": n,
        "bursts": len({r.burst_id for r in dataset.records}),
        "status_counts": {s: statuses.get(s, 0) for s in sorted(STATUSES)},
        "failure_rate": statuses.get("Failed", 0) / n if n else 0.0,
        "counts": [
            {"location": loc, "operator": op, "device": dev, "count": c}
            for (loc, op, dev), c in sorted(counts.items())
        ],
        "time_span": span,
    }


def count_for(summary: dict, location=None, operator=None, device=None) -> int:
    """Sum summary counts matching the given labels; ``None`` is a wildcard."""
    total = 0
    for row in summary["counts"]:
        if location is not None and row["location"] != location:
            continue
        if operator is not None and row["operator"] != operator:
            continue
        if device is not None and row["device"] != device:
            continue
        total += row["count"]
    return total
