import hashlib
from dataclasses import replace

import numpy as np
import pytest

from sms_sidechan.exceptions import InvalidParameter
from sms_sidechan.features import build_signatures, durations
from sms_sidechan.simulator import (
    DEFAULT_START_EPOCH_MS,
    Countermeasure,
    DelayComponent,
    DelayProfile,
    Scenario,
    apply_countermeasure,
    constant_leg,
    sample_leg,
    shifted_in_time,
    simulate_campaign,
    simulate_transmission,
    two_location_scenario,
)
from sms_sidechan.trace import DAY_MS, format_trace_csv


def constant_profile(loc="DE-4", up=100, down=120, rep=130, **kw):
    return DelayProfile(loc, "G", "p8l", constant_leg(up), constant_leg(down), constant_leg(rep), **kw)


def scenario(*profiles, **kw):
    kw.setdefault("bursts_per_profile", 18)
    return Scenario(tuple(profiles), **kw)


def test_constant_leg_sum():
    p = constant_profile()
    comps = [DelayComponent.constant(c) for c in (10, 20, 30, 45)]
    rng = np.random.default_rng(0)
    assert sample_leg(comps, 5, 0, p, rng) == 105


def test_load_curve_scales():
    curve = [1.0] * 24
    curve[7] = 2.0
    p = constant_profile(load_curve=curve)
    comps = constant_leg(100)
    rng = np.random.default_rng(0)
    assert sample_leg(comps, 7, 0, p, rng) == 2 * sample_leg(comps, 6, 0, p, rng) == 200


def test_normal_leg_mean_monte_carlo():
    p = constant_profile()
    comps = [DelayComponent.normal(100, 10, 1)] * 4
    x = sample_leg(comps, 0, 0, p, np.random.default_rng(1), size=100_000)
    analytic = sum(c.mean() for c in comps)
    assert analytic == 400
    assert abs(x.mean() - analytic) / analytic < 0.01
    assert x.min() > 0


def test_lognormal_and_heavy_tail_means():
    p = constant_profile()
    comps = [
        DelayComponent.lognormal(20, 3.0, 0.5),
        DelayComponent.lognormal(5, 2.0, 0.8, heavy_tail_prob=0.05, heavy_tail_scale=4),
        DelayComponent.normal(50, 5, 1),
        DelayComponent.constant(12),
    ]
    x = sample_leg(comps, 0, 0, p, np.random.default_rng(2), size=200_000)
    analytic = sum(c.mean() for c in comps)
    assert abs(x.mean() - analytic) / analytic < 0.01


def test_drift_factor_monte_carlo():
    p = constant_profile(drift_per_day=0.02)
    comps = [DelayComponent.lognormal(10, 3.0, 0.4)] * 4
    m0 = sample_leg(comps, 0, 0, p, np.random.default_rng(3), size=100_000).mean()
    m9 = sample_leg(comps, 0, 9, p, np.random.default_rng(4), size=100_000).mean()
    assert m9 / m0 == pytest.approx(1.02**9, rel=0.01)


def test_component_validation():
    with pytest.raises(InvalidParameter):
        DelayComponent.constant(0)
    with pytest.raises(InvalidParameter):
        DelayComponent.normal(10, 1, floor=0)
    with pytest.raises(InvalidParameter):
        DelayComponent("gamma", 1)
    with pytest.raises(InvalidParameter):
        constant_profile(load_curve=[1.0] * 23)
    with pytest.raises(InvalidParameter):
        constant_profile(drift_per_day=-1.0)
    with pytest.raises(InvalidParameter):
        constant_profile(failure_prob=1.5)


def test_failure_prob_one():
    ds = simulate_campaign(scenario(constant_profile(failure_prob=1.0)))
    assert all(r.status == "Failed" and r.t_del is None and r.t_sent is not None for r in ds)


def test_constant_legs_transmission():
    sc = scenario(constant_profile())
    rec = simulate_transmission(sc, sc.profiles[0], 0, 0, DEFAULT_START_EPOCH_MS)
    assert rec.t_sent - rec.t_tx == 100
    assert rec.t_del - rec.t_sent == 250
    assert (rec.location, rec.routing, rec.connection) == ("DE-4", "SMSoIP", "LTE")


def test_uniform_random_on_report_leg():
    sc = scenario(constant_profile(), bursts_per_profile=500,
                  countermeasure=Countermeasure("uniform_random", 1000), span_days=21)
    ds = simulate_campaign(sc)
    t_del = np.array([r.t_del - r.t_sent for r in ds])
    t_sent = np.array([r.t_sent - r.t_tx for r in ds])
    assert len(t_del) == 10_000
    assert t_del.min() >= 250 and t_del.max() < 1250
    # floor to whole ms lowers the mean of U[250, 1250) by 0.5
    assert abs(t_del.mean() - 750) <= 10
    assert np.all(t_sent == 100)


def test_all_legs_countermeasure_touches_sent():
    sc = scenario(constant_profile(), countermeasure=Countermeasure("quantize", 1000, "all_legs"))
    ds = simulate_campaign(sc)
    assert {r.t_sent - r.t_tx for r in ds} == {1000}
    assert {r.t_del - r.t_sent for r in ds} == {1000}


def test_constant_pad_makes_delivery_deterministic():
    a = constant_profile("A", down=120)
    b = constant_profile("B", down=400)
    sc = apply_countermeasure(scenario(a, b), Countermeasure("constant_pad", 2000))
    vectors = build_signatures(simulate_campaign(sc))
    assert {v.T_del for v in vectors} == {2000}


def test_constant_pad_falls_back_to_base():
    sc = apply_countermeasure(scenario(constant_profile(down=3000)), Countermeasure("constant_pad", 2000))
    assert {r.t_del - r.t_sent for r in simulate_campaign(sc)} == {3130}


def test_constant_pad_variance_zero_on_random_profile():
    sc = two_location_scenario((250, 400), seed=4, bursts_per_profile=10)
    sc = apply_countermeasure(sc, Countermeasure("constant_pad", 2500))
    assert np.var([r.t_del - r.t_sent for r in simulate_campaign(sc)]) == 0


def test_countermeasure_validation():
    assert apply_countermeasure(scenario(constant_profile()), Countermeasure()).countermeasure.kind == "none"
    for kind in ("uniform_random", "constant_pad", "quantize"):
        with pytest.raises(InvalidParameter):
            Countermeasure(kind, 0)
    with pytest.raises(InvalidParameter):
        Countermeasure("constant_pad", 10, "uplink")


def test_none_countermeasure_is_identity():
    sc = two_location_scenario(seed=8, bursts_per_profile=5)
    assert simulate_campaign(apply_countermeasure(sc, None)).records == simulate_campaign(sc).records


def test_campaign_counts_and_schedule():
    sc = scenario(constant_profile("A"), constant_profile("B"))
    ds = simulate_campaign(sc)
    assert len(ds) == 2 * 18 * 20 == 720
    first = [r for r in ds if r.burst_id == 0]
    assert [r.t_tx - DEFAULT_START_EPOCH_MS for r in first] == [5000 * i for i in range(20)]
    second = [r for r in ds if r.burst_id == 1]
    assert second[0].t_tx - first[0].t_tx == 3_600_000
    assert {r.location for r in ds if r.burst_id >= 18} == {"B"}
    assert ds.meta["scenario_digest"] == sc.digest()


def test_campaign_determinism():
    sc = two_location_scenario(seed=99, bursts_per_profile=6)
    a = format_trace_csv(simulate_campaign(sc).records).encode()
    b = format_trace_csv(simulate_campaign(sc).records).encode()
    assert hashlib.sha256(a).digest() == hashlib.sha256(b).digest()
    c = format_trace_csv(simulate_campaign(replace(sc, seed=100)).records).encode()
    assert a != c


def test_monotone_timestamps():
    sc = two_location_scenario((5, 8), downlink_std=40, seed=1, bursts_per_profile=30)
    for r in simulate_campaign(sc):
        assert r.t_tx < r.t_sent < r.t_del
        durations(r)


def test_adding_profile_keeps_other_samples():
    sc = two_location_scenario(seed=5, bursts_per_profile=4)
    solo = replace(sc, profiles=sc.profiles[1:])
    a = [r for r in simulate_campaign(sc) if r.location == "LOC-2"]
    b = list(simulate_campaign(solo))
    assert [(r.t_tx, r.t_sent, r.t_del) for r in a] == [(r.t_tx, r.t_sent, r.t_del) for r in b]


def test_countermeasure_does_not_perturb_base_streams():
    sc = two_location_scenario(seed=5, bursts_per_profile=4)
    cm = apply_countermeasure(sc, Countermeasure("uniform_random", 500))
    base = simulate_campaign(sc).records
    other = simulate_campaign(cm).records
    assert [r.t_sent for r in base] == [r.t_sent for r in other]
    assert all(o.t_del >= b.t_del for b, o in zip(base, other))


def test_distance_term_off_by_default():
    near = constant_profile("A", distance_km=1.0)
    far = constant_profile("B", distance_km=5000.0)
    ds = simulate_campaign(scenario(near, far))
    assert {r.t_del - r.t_sent for r in ds} == {250}
    on = simulate_campaign(scenario(replace(far, ms_per_km=0.01)))
    assert {r.t_del - r.t_sent for r in on} == {350}


def test_schedule_validation():
    with pytest.raises(InvalidParameter):
        Scenario((constant_profile(),), bursts_per_profile=100, span_days=3)
    with pytest.raises(InvalidParameter):
        Scenario((constant_profile(),), burst_size=0)
    with pytest.raises(InvalidParameter):
        Scenario((constant_profile(), constant_profile()))
    assert Scenario((constant_profile(),), span_days=2).n_bursts == 48


def test_shifted_in_time_applies_drift():
    sc = scenario(constant_profile(drift_per_day=0.1), bursts_per_profile=2)
    later = shifted_in_time(sc, 3)
    rec = simulate_campaign(later).records[0]
    assert rec.t_tx == DEFAULT_START_EPOCH_MS + 3 * DAY_MS
    assert rec.t_sent - rec.t_tx == int(100 * 1.1**3)


def test_scenario_json_round_trip():
    sc = two_location_scenario(seed=3, bursts_per_profile=5)
    sc = apply_countermeasure(sc, Countermeasure("quantize", 50, "all_legs"))
    again = Scenario.from_json(sc.to_json())
    assert again == sc
    assert again.digest() == sc.digest()
