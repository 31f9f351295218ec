"""Synthetic SMS timing campaigns.

Every leg of an SMS exchange (sender to SMSC, SMSC to receiver, Delivery
Report back to the sender) is the sum of four delay components: UE
processing, propagation, routing and core processing. A leg sample is then
scaled by an hour-of-day load multiplier and by a per-day drift factor.

Random streams are keyed by (seed, profile labels, burst index, seq, stream),
so adding a profile or installing a countermeasure does not perturb the
samples drawn for anything else.
"""

from __future__ import annotations

import hashlib
import json
import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .exceptions import InvalidParameter
from .trace import CONNECTIONS, DAY_MS, HOUR_MS, ROUTINGS, TimingRecord, TraceDataset, utc_hour

LEG_NAMES = ("uplink", "downlink", "report")
# stream indices beyond the legs
_FAILURE_STREAM = 3
_COUNTER_STREAM = 4

INTRA_BURST_MS = 5_000
DEFAULT_START_EPOCH_MS = 1_672_531_200_000  # 2023-01-01T00:00:00Z, a Sunday


@dataclass(frozen=True)
class DelayComponent:
    """One delay term of a leg.

    ``dist`` is ``lognormal`` (``shift + exp(N(a, b))``), ``normal``
    (``max(N(a, b), c)``) or ``constant`` (``a``). With probability
    ``heavy_tail_prob`` a sample is multiplied by ``heavy_tail_scale``.
    """

    dist: str
    a: float
    b: float = 0.0
    c: float = 0.0
    heavy_tail_prob: float = 0.0
    heavy_tail_scale: float = 1.0

    def __post_init__(self) -> None:
        for name in ("a", "b", "c", "heavy_tail_prob", "heavy_tail_scale"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.dist not in ("lognormal", "normal", "constant"):
            raise InvalidParameter(f"unknown distribution {self.dist!r}")
        if not 0.0 <= self.heavy_tail_prob <= 1.0:
            raise InvalidParameter("heavy_tail_prob must be in [0, 1]")
        if self.heavy_tail_scale < 1.0:
            raise InvalidParameter("heavy_tail_scale must be >= 1")
        if self.dist == "constant" and not self.a > 0:
            raise InvalidParameter("constant delay must be positive")
        if self.dist == "normal" and not (self.c > 0 and self.b >= 0):
            raise InvalidParameter("normal delay needs std >= 0 and a positive floor")
        if self.dist == "lognormal" and not (self.a >= 0 and self.c >= 0):
            raise InvalidParameter("lognormal shift and sigma must be nonnegative")

    @classmethod
    def constant(cls, value: float, **kw) -> DelayComponent:
        return cls("constant", value, **kw)

    @classmethod
    def normal(cls, mean: float, std: float, floor: float = 1.0, **kw) -> DelayComponent:
        return cls("normal", mean, std, floor, **kw)

    @classmethod
    def lognormal(cls, shift: float, mu_log: float, sigma_log: float, **kw) -> DelayComponent:
        # a = shift, b = mu_log, c = sigma_log
        return cls("lognormal", shift, mu_log, sigma_log, **kw)

    def sample(self, rng: np.random.Generator, size=None):
        if self.dist == "constant":
            x = np.full(size, self.a) if size is not None else self.a
        elif self.dist == "normal":
            x = np.maximum(rng.normal(self.a, self.b, size), self.c)
        else:
            x = self.a + rng.lognormal(self.b, self.c, size)
        if self.heavy_tail_prob > 0:
            hit = rng.random(size) < self.heavy_tail_prob
            x = np.where(hit, x * self.heavy_tail_scale, x)
        return x if size is not None else float(x)

    def mean(self) -> float:
        """Closed-form mean; the normal floor is ignored (negligible when far)."""
        if self.dist == "constant":
            base = self.a
        elif self.dist == "normal":
            base = self.a
        else:
            base = self.a + math.exp(self.b + self.c**2 / 2)
        return base * (1 + self.heavy_tail_prob * (self.heavy_tail_scale - 1))

    def to_json(self) -> dict:
        if self.dist == "constant":
            out = {"dist": "constant", "value": self.a}
        elif self.dist == "normal":
            out = {"dist": "normal", "mean": self.a, "std": self.b, "floor": self.c}
        else:
            out = {"dist": "lognormal", "shift": self.a, "mu_log": self.b, "sigma_log": self.c}
        if self.heavy_tail_prob:
            out["heavy_tail_prob"] = self.heavy_tail_prob
            out["heavy_tail_scale"] = self.heavy_tail_scale
        return out

    @classmethod
    def from_json(cls, obj: dict) -> DelayComponent:
        kw = {
            "heavy_tail_prob": float(obj.get("heavy_tail_prob", 0.0)),
            "heavy_tail_scale": float(obj.get("heavy_tail_scale", 1.0)),
        }
        dist = obj.get("dist")
        if dist == "constant":
            return cls.constant(float(obj["value"]), **kw)
        if dist == "normal":
            return cls.normal(float(obj["mean"]), float(obj["std"]), float(obj.get("floor", 1.0)), **kw)
        if dist == "lognormal":
            return cls.lognormal(
                float(obj.get("shift", 0.0)), float(obj["mu_log"]), float(obj["sigma_log"]), **kw
            )
        raise InvalidParameter(f"unknown distribution {dist!r}")


Leg = tuple[DelayComponent, DelayComponent, DelayComponent, DelayComponent]


def constant_leg(total: float) -> Leg:
    """Four constant components summing to ``total``."""
    return tuple(DelayComponent.constant(total / 4) for _ in range(4))  # type: ignore[return-value]


def normal_leg(mean: float, std: float, floor: float = 1.0) -> Leg:
    """Four iid normal components whose sum has the given mean and std."""
    return tuple(DelayComponent.normal(mean / 4, std / 2, floor) for _ in range(4))  # type: ignore[return-value]


@dataclass(frozen=True)
class DelayProfile:
    location: str
    operator: str
    device: str
    uplink: Leg
    downlink: Leg
    report: Leg
    routing: str = "SMSoIP"
    connection: str = "LTE"
    distance_km: float | None = None
    failure_prob: float = 0.0
    load_curve: tuple[float, ...] = (1.0,) * 24
    drift_per_day: float = 0.0
    # one-way propagation per km added to the downlink and report legs; off by default
    ms_per_km: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "load_curve", tuple(float(x) for x in self.load_curve))
        for name in LEG_NAMES:
            leg = tuple(getattr(self, name))
            if len(leg) != 4:
                raise InvalidParameter(f"{name} leg needs exactly 4 components")
            object.__setattr__(self, name, leg)
        if not 0.0 <= self.failure_prob <= 1.0:
            raise InvalidParameter("failure_prob must be in [0, 1]")
        if len(self.load_curve) != 24 or any(not x > 0 for x in self.load_curve):
            raise InvalidParameter("load_curve needs 24 positive multipliers")
        if not self.drift_per_day > -1:
            raise InvalidParameter("drift_per_day must be > -1")
        if self.routing not in ROUTINGS:
            raise InvalidParameter(f"unknown routing {self.routing!r}")
        if self.connection not in CONNECTIONS:
            raise InvalidParameter(f"unknown connection {self.connection!r}")
        if self.ms_per_km < 0 or (self.distance_km is not None and self.distance_km < 0):
            raise InvalidParameter("distance terms must be nonnegative")

    @property
    def key(self) -> int:
        """Stable 32-bit key derived from the labels, used to seed streams."""
        text = "|".join((self.location, self.operator, self.device, self.routing, self.connection))
        return zlib.crc32(text.encode("utf-8"))

    def leg(self, index: int) -> Leg:
        return getattr(self, LEG_NAMES[index])

    def to_json(self) -> dict:
        return {
            "labels": {
                "location": self.location,
                "operator": self.operator,
                "device": self.device,
                "routing": self.routing,
                "connection": self.connection,
                "distance_km": self.distance_km,
            },
            **{name: [c.to_json() for c in getattr(self, name)] for name in LEG_NAMES},
            "failure_prob": self.failure_prob,
            "load_curve": list(self.load_curve),
            "drift_per_day": self.drift_per_day,
            "ms_per_km": self.ms_per_km,
        }

    @classmethod
    def from_json(cls, obj: dict) -> DelayProfile:
        labels = obj["labels"]
        kw = {}
        if "load_curve" in obj:
            kw["load_curve"] = tuple(obj["load_curve"])
        return cls(
            location=labels["location"],
            operator=labels["operator"],
            device=labels["device"],
            routing=labels.get("routing", "SMSoIP"),
            connection=labels.get("connection", "LTE"),
            distance_km=labels.get("distance_km"),
            failure_prob=float(obj.get("failure_prob", 0.0)),
            drift_per_day=float(obj.get("drift_per_day", 0.0)),
            ms_per_km=float(obj.get("ms_per_km", 0.0)),
            **{name: tuple(DelayComponent.from_json(c) for c in obj[name]) for name in LEG_NAMES},
            **kw,
        )


@dataclass(frozen=True)
class Countermeasure:
    """Network-side timing manipulation.

    ``uniform_random`` adds U[0, param) ms, ``constant_pad`` holds the
    notification until ``param`` ms have elapsed (never shortening), and
    ``quantize`` releases it at the next multiple of ``param`` ms. With
    ``applied_to="report_leg"`` only the Delivery Report is manipulated, which
    acts on the delivery duration; ``all_legs`` treats the Sent
    acknowledgment the same way.
    """

    kind: str = "none"
    param: float = 0.0
    applied_to: str = "report_leg"

    def __post_init__(self) -> None:
        object.__setattr__(self, "param", float(self.param))
        if self.kind not in ("none", "uniform_random", "constant_pad", "quantize"):
            raise InvalidParameter(f"unknown countermeasure {self.kind!r}")
        if self.applied_to not in ("report_leg", "all_legs"):
            raise InvalidParameter(f"unknown countermeasure target {self.applied_to!r}")
        if self.kind != "none" and not self.param > 0:
            raise InvalidParameter(f"{self.kind} needs a positive parameter, got {self.param}")

    def adjust(self, duration: float, rng: np.random.Generator) -> float:
        if self.kind == "uniform_random":
            return duration + rng.uniform(0.0, self.param)
        if self.kind == "constant_pad":
            return max(duration, self.param)
        if self.kind == "quantize":
            return math.ceil(duration / self.param) * self.param
        return duration

    def to_json(self) -> dict:
        return {"kind": self.kind, "param": self.param, "applied_to": self.applied_to}

    @classmethod
    def from_json(cls, obj: dict | None) -> Countermeasure:
        if not obj:
            return cls()
        return cls(obj.get("kind", "none"), float(obj.get("param", 0.0)), obj.get("applied_to", "report_leg"))


@dataclass(frozen=True)
class Scenario:
    profiles: tuple[DelayProfile, ...]
    seed: int = 0
    bursts_per_profile: int | None = None
    burst_size: int = 20
    burst_interval_ms: int = HOUR_MS
    start_epoch_ms: int = DEFAULT_START_EPOCH_MS
    span_days: int = 3
    # day 0 of the drift factor; defaults to start_epoch_ms
    reference_epoch_ms: int | None = None
    countermeasure: Countermeasure = field(default_factory=Countermeasure)

    def __post_init__(self) -> None:
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if not self.profiles:
            raise InvalidParameter("scenario needs at least one profile")
        if self.burst_size < 1:
            raise InvalidParameter("burst_size must be >= 1")
        if self.span_days < 1:
            raise InvalidParameter("span_days must be >= 1")
        if self.burst_interval_ms <= 0:
            raise InvalidParameter("burst_interval_ms must be positive")
        if self.bursts_per_profile is not None and self.bursts_per_profile < 1:
            raise InvalidParameter("bursts_per_profile must be >= 1")
        if (self.burst_size - 1) * INTRA_BURST_MS >= self.burst_interval_ms:
            raise InvalidParameter("bursts overlap: burst_interval too short for burst_size")
        if self.n_bursts * self.burst_interval_ms > self.span_days * DAY_MS:
            raise InvalidParameter("burst schedule exceeds span_days")
        keys = [p.key for p in self.profiles]
        if len(set(keys)) != len(keys):
            raise InvalidParameter("profiles must have distinct label bundles")

    @property
    def n_bursts(self) -> int:
        if self.bursts_per_profile is not None:
            return self.bursts_per_profile
        return self.span_days * DAY_MS // self.burst_interval_ms

    @property
    def reference_epoch(self) -> int:
        return self.start_epoch_ms if self.reference_epoch_ms is None else self.reference_epoch_ms

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "schedule": {
                "bursts_per_profile": self.bursts_per_profile,
                "burst_size": self.burst_size,
                "burst_interval_ms": self.burst_interval_ms,
                "start_epoch_ms": self.start_epoch_ms,
                "span_days": self.span_days,
                "reference_epoch_ms": self.reference_epoch_ms,
            },
            "profiles": [p.to_json() for p in self.profiles],
            "countermeasure": self.countermeasure.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> Scenario:
        sched = obj.get("schedule", {})
        kw = {k: sched[k] for k in (
            "bursts_per_profile", "burst_size", "burst_interval_ms",
            "start_epoch_ms", "span_days", "reference_epoch_ms",
        ) if k in sched}
        return cls(
            profiles=tuple(DelayProfile.from_json(p) for p in obj["profiles"]),
            seed=int(obj.get("seed", 0)),
            countermeasure=Countermeasure.from_json(obj.get("countermeasure")),
            **kw,
        )

    def digest(self) -> str:
        text = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return Scenario.from_json(json.load(fh))


def stream_rng(seed: int, profile: DelayProfile, burst: int, seq: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), profile.key, burst, seq, stream]))


def drift_factor(profile: DelayProfile, day: int) -> float:
    return (1.0 + profile.drift_per_day) ** day


def sample_leg(
    components: Sequence[DelayComponent],
    hour: int,
    day: int,
    profile: DelayProfile,
    rng: np.random.Generator,
    size=None,
):
    """Sum of the four component samples, scaled by load and drift."""
    total = sum(c.sample(rng, size) for c in components)
    return total * profile.load_curve[hour] * drift_factor(profile, day)


def simulate_transmission(
    scenario: Scenario,
    profile: DelayProfile,
    burst_id: int,
    seq: int,
    t_tx: int,
    burst_index: int | None = None,
) -> TimingRecord:
    """Simulate one SMS and its notifications.

    ``burst_index`` is the profile-local burst number keying the random
    streams; it defaults to ``burst_id``.
    """
    b = burst_id if burst_index is None else burst_index
    hour = utc_hour(t_tx)
    day = (t_tx - scenario.reference_epoch) // DAY_MS
    labels = dict(
        location=profile.location, operator=profile.operator, device=profile.device,
        routing=profile.routing, connection=profile.connection, distance_km=profile.distance_km,
    )
    legs = [
        sample_leg(profile.leg(i), hour, day, profile, stream_rng(scenario.seed, profile, b, seq, i))
        for i in range(3)
    ]
    if profile.distance_km is not None and profile.ms_per_km:
        legs[1] += profile.ms_per_km * profile.distance_km
        legs[2] += profile.ms_per_km * profile.distance_km

    cm = scenario.countermeasure
    sent_dur = legs[0]
    del_dur = legs[1] + legs[2]
    if cm.kind != "none":
        crng = stream_rng(scenario.seed, profile, b, seq, _COUNTER_STREAM)
        if cm.applied_to == "all_legs":
            sent_dur = cm.adjust(sent_dur, crng)
        del_dur = cm.adjust(del_dur, crng)

    # the sender's clock truncates to whole milliseconds
    t_sent = t_tx + max(1, math.floor(sent_dur))
    failed = False
    if profile.failure_prob > 0:
        frng = stream_rng(scenario.seed, profile, b, seq, _FAILURE_STREAM)
        failed = frng.random() < profile.failure_prob
    if failed:
        return TimingRecord(burst_id, seq, t_tx, t_sent, None, "Failed", **labels)
    t_del = t_sent + max(1, math.floor(del_dur))
    return TimingRecord(burst_id, seq, t_tx, t_sent, t_del, "Delivered", **labels)


def simulate_campaign(scenario: Scenario) -> TraceDataset:
    """Every profile gets the same burst schedule; burst ids are global."""
    n = scenario.n_bursts
    records = []
    for pidx, profile in enumerate(scenario.profiles):
        for b in range(n):
            burst_id = pidx * n + b
            t0 = scenario.start_epoch_ms + b * scenario.burst_interval_ms
            for seq in range(scenario.burst_size):
                t_tx = t0 + seq * INTRA_BURST_MS
                records.append(simulate_transmission(scenario, profile, burst_id, seq, t_tx, burst_index=b))
    meta = {"source": "simulator", "seed": scenario.seed, "scenario_digest": scenario.digest()}
    return TraceDataset(tuple(records), meta)


def apply_countermeasure(scenario: Scenario, countermeasure: Countermeasure | None) -> Scenario:
    if countermeasure is None:
        countermeasure = Countermeasure()
    return replace(scenario, countermeasure=countermeasure)


def shifted_in_time(scenario: Scenario, days: int, reseed: bool = True) -> Scenario:
    """The same scenario measured ``days`` later, with drift measured from the original start."""
    seed = scenario.seed
    if reseed and days:
        seed = int(np.random.SeedSequence([scenario.seed & (2**64 - 1), days]).generate_state(2, np.uint64)[0])
    return replace(
        scenario,
        start_epoch_ms=scenario.start_epoch_ms + days * DAY_MS,
        reference_epoch_ms=scenario.reference_epoch,
        seed=seed,
    )


def two_location_scenario(
    downlink_means: Sequence[float] = (250.0, 400.0),
    downlink_std: float = 20.0,
    seed: int = 0,
    span_days: int = 3,
    bursts_per_profile: int | None = None,
    locations: Sequence[str] | None = None,
    **profile_kw,
) -> Scenario:
    """Illustrative scenario: profiles differing only in downlink mean.

    The constants are not calibrated against any measured network.
    """
    locations = locations or [f"LOC-{i + 1}" for i in range(len(downlink_means))]
    profiles = []
    for loc, mean in zip(locations, downlink_means):
        profiles.append(DelayProfile(
            location=loc,
            operator="G",
            device="p8l",
            uplink=normal_leg(800.0, 40.0),
            downlink=normal_leg(mean, downlink_std),
            report=normal_leg(600.0, 20.0),
            **profile_kw,
        ))
    return Scenario(tuple(profiles), seed=seed, span_days=span_days, bursts_per_profile=bursts_per_profile)


__all__ = [
    "DelayComponent", "DelayProfile", "Countermeasure", "Scenario",
    "sample_leg", "simulate_transmission", "simulate_campaign", "apply_countermeasure",
    "load_scenario", "shifted_in_time", "two_location_scenario", "constant_leg", "normal_leg",
]
