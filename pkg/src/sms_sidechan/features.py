"""Timing features and location signatures.

Per transmission: sent duration, delivery duration, total duration and the
delivery ratio. Between two consecutive transmissions of one burst: the
relative change of the sent and delivery durations. The six values together
form the location signature fed to the classifiers.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DegenerateTiming, NonConsecutive, NotDelivered, ZeroBaseline
from .trace import TimingRecord, TraceDataset

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("T_sent", "T_del", "T_tot", "P", "dT_sent", "dT_del")

FEATURE_HEADER = (
    "burst_id",
    "seq",
    "T_sent_ms",
    "T_del_ms",
    "T_tot_ms",
    "P",
    "dT_sent",
    "dT_del",
    "location",
    "operator",
    "device",
    "t_tx_ms",
)

MIN_OUTLIER_GROUP = 8


@dataclass(frozen=True, slots=True)
class Durations:
    T_sent: int
    T_del: int
    T_tot: int
    P: float


@dataclass(frozen=True, slots=True)
class FeatureVector:
    T_sent: int
    T_del: int
    T_tot: int
    P: float
    dT_sent: float
    dT_del: float
    location: str
    operator: str
    device: str
    burst_id: int
    seq: int
    t_tx: int

    def as_row(self) -> tuple[float, ...]:
        return (self.T_sent, self.T_del, self.T_tot, self.P, self.dT_sent, self.dT_del)

    def label(self, field_name: str) -> str:
        return getattr(self, field_name)


def durations(rec: TimingRecord) -> Durations:
    if rec.status != "Delivered" or rec.t_del is None or rec.t_sent is None:
        raise NotDelivered(f"record ({rec.burst_id}, {rec.seq}) has status {rec.status}")
    t_sent = rec.t_sent - rec.t_tx
    t_del = rec.t_del - rec.t_sent
    if t_sent <= 0 or t_del <= 0:
        raise DegenerateTiming(
            f"record ({rec.burst_id}, {rec.seq}): T_sent={t_sent}, T_del={t_del}"
        )
    t_tot = t_sent + t_del
    return Durations(t_sent, t_del, t_tot, t_del / t_tot)


def delta_features(prev: Durations, cur: Durations) -> tuple[float, float]:
    """Relative change of (T_sent, T_del) from ``prev`` to ``cur``."""
    if prev.T_sent <= 0 or prev.T_del <= 0:
        raise ZeroBaseline("previous durations must be positive")
    return (
        (cur.T_sent - prev.T_sent) / prev.T_sent,
        (cur.T_del - prev.T_del) / prev.T_del,
    )


def signature_pair(prev: TimingRecord, cur: TimingRecord) -> FeatureVector:
    if prev.burst_id != cur.burst_id or cur.seq - prev.seq != 1:
        raise NonConsecutive(
            f"({prev.burst_id}, {prev.seq}) -> ({cur.burst_id}, {cur.seq})"
        )
    d_prev = durations(prev)
    d_cur = durations(cur)
    ds, dd = delta_features(d_prev, d_cur)
    return FeatureVector(
        d_cur.T_sent, d_cur.T_del, d_cur.T_tot, d_cur.P, ds, dd,
        cur.location, cur.operator, cur.device, cur.burst_id, cur.seq, cur.t_tx,
    )


@dataclass
class SignatureResult:
    vectors: list[FeatureVector]
    skipped: int
    reasons: dict[str, int]


def build_signatures_report(dataset: TraceDataset | Iterable[TimingRecord]) -> SignatureResult:
    """Build signatures and count the transmissions that could not yield one."""
    records = dataset.records if isinstance(dataset, TraceDataset) else list(dataset)
    by_key = {(r.burst_id, r.seq): r for r in records}
    vectors = []
    reasons: dict[str, int] = {}

    def skip(reason: str) -> None:
        reasons[reason] = reasons.get(reason, 0) + 1

    for rec in records:
        if rec.seq == 0:
            continue
        if rec.status != "Delivered":
            skip("not_delivered")
            continue
        prev = by_key.get((rec.burst_id, rec.seq - 1))
        if prev is None:
            skip("missing_predecessor")
            continue
        if prev.status != "Delivered":
            skip("predecessor_not_delivered")
            continue
        try:
            vectors.append(signature_pair(prev, rec))
        except DegenerateTiming:
            skip("degenerate_timing")
    skipped = sum(reasons.values())
    if skipped:
        logger.debug("skipped %d transmissions: %s", skipped, reasons)
    return SignatureResult(vectors, skipped, reasons)


def build_signatures(dataset: TraceDataset | Iterable[TimingRecord]) -> list[FeatureVector]:
    return build_signatures_report(dataset).vectors


def feature_matrix(vectors: Sequence[FeatureVector]) -> np.ndarray:
    if not vectors:
        return np.empty((0, len(FEATURE_NAMES)))
    return np.array([v.as_row() for v in vectors], dtype=float)


def labels_of(vectors: Sequence[FeatureVector], field_name: str = "location") -> np.ndarray:
    return np.array([getattr(v, field_name) for v in vectors], dtype=object)


# -- outliers ----------------------------------------------------------------


@dataclass(frozen=True)
class OutlierPolicy:
    """``kind`` is ``none``, ``iqr`` (fence multiplier ``param``) or ``zscore``."""

    kind: str = "none"
    param: float = 1.5

    def __post_init__(self) -> None:
        if self.kind not in ("none", "iqr", "zscore"):
            raise ValueError(f"unknown outlier policy {self.kind!r}")
        if self.kind != "none" and not self.param > 0:
            raise ValueError("outlier threshold must be positive")

    @classmethod
    def parse(cls, text: str) -> OutlierPolicy:
        """Parse ``none``, ``iqr(1.5)`` or ``zscore(3)``."""
        text = text.strip()
        if text == "none":
            return cls()
        name, _, rest = text.partition("(")
        if not rest.endswith(")"):
            raise ValueError(f"cannot parse outlier policy {text!r}")
        return cls(name.strip(), float(rest[:-1]))


def _outlier_mask(values: np.ndarray, policy: OutlierPolicy) -> np.ndarray:
    if policy.kind == "iqr":
        q1, q3 = np.percentile(values, [25, 75])
        spread = q3 - q1
        lo, hi = q1 - policy.param * spread, q3 + policy.param * spread
        return (values < lo) | (values > hi)
    mean = values.mean()
    std = values.std()
    if std == 0:
        return np.zeros(len(values), dtype=bool)
    return np.abs(values - mean) / std > policy.param


def remove_outliers(
    vectors: Sequence[FeatureVector], policy: OutlierPolicy | str = "none"
) -> tuple[list[FeatureVector], list[FeatureVector]]:
    """Drop vectors whose T_del is an outlier within its label group.

    Groups are (location, operator, device). Groups with fewer than eight
    vectors pass through unfiltered. Returns ``(kept, removed)``.
    """
    if isinstance(policy, str):
        policy = OutlierPolicy.parse(policy)
    vectors = list(vectors)
    if policy.kind == "none":
        return vectors, []
    groups: dict[tuple, list[int]] = {}
    for i, v in enumerate(vectors):
        groups.setdefault((v.location, v.operator, v.device), []).append(i)
    drop = set()
    for key, idx in groups.items():
        if len(idx) < MIN_OUTLIER_GROUP:
            logger.info("group %s too small for outlier filtering (%d)", key, len(idx))
            continue
        values = np.array([vectors[i].T_del for i in idx], dtype=float)
        mask = _outlier_mask(values, policy)
        drop.update(i for i, m in zip(idx, mask) if m)
    kept = [v for i, v in enumerate(vectors) if i not in drop]
    removed = [v for i, v in enumerate(vectors) if i in drop]
    return kept, removed


# -- CSV ---------------------------------------------------------------------


def format_feature_csv(vectors: Iterable[FeatureVector]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FEATURE_HEADER)
    for v in vectors:
        writer.writerow([
            v.burst_id, v.seq, v.T_sent, v.T_del, v.T_tot, repr(v.P),
            repr(v.dT_sent), repr(v.dT_del), v.location, v.operator, v.device, v.t_tx,
        ])
    return buf.getvalue()


def parse_feature_csv(text: str | bytes) -> list[FeatureVector]:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != FEATURE_HEADER:
        raise ValueError("feature CSV: unexpected header")
    out = []
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(FEATURE_HEADER):
            raise ValueError(f"feature CSV line {line}: expected {len(FEATURE_HEADER)} fields")
        try:
            out.append(FeatureVector(
                int(row[2]), int(row[3]), int(row[4]), float(row[5]),
                float(row[6]), float(row[7]), row[8], row[9], row[10],
                int(row[0]), int(row[1]), int(row[11]),
            ))
        except ValueError as exc:
            raise ValueError(f"feature CSV line {line}: {exc}") from None
    return out


def read_features(path) -> list[FeatureVector]:
    with open(path, "rb") as fh:
        return parse_feature_csv(fh.read())
