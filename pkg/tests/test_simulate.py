import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exitplan.decision import BaseMetrics, CascadeCosts, ThresholdConfig, predict_cascade
from exitplan.profiles import CalibrationRecord, group_records, profile_all
from exitplan.simulate import SimulationError, compare, simulate_cascade
from exitplan.synth import generate_records

COSTS2 = CascadeCosts((1.0, 3.0), (0.1, 0.3), (1.0, 4.0))


def recs(rows):
    """rows: {location: [(confidence, correct), ...]} sharing sample ids."""
    return group_records(
        CalibrationRecord(i, loc, c, k) for loc, vals in rows.items() for i, (c, k) in enumerate(vals)
    )


def test_terminates_at_first_passing_exit():
    g = recs({"e": [(0.7, True)], "final": [(0.2, False)]})
    m = simulate_cascade(["e", "final"], ThresholdConfig((0.6,)), g, COSTS2)
    assert m.histogram == (1, 0)
    assert m.accuracy == 1.0 and m.mean_macs == 1.0


def test_nothing_passes_equals_backbone():
    g = recs({"e": [(0.1, True), (0.2, True)], "final": [(0.5, True), (0.5, False)]})
    m = simulate_cascade(["e", "final"], ThresholdConfig((0.6,)), g, COSTS2)
    assert m.early_termination == 0
    assert (m.accuracy, m.mean_macs, m.mean_latency_s, m.mean_energy_mj) == (0.5, 3.0, 0.3, 4.0)


def test_k0_is_backbone():
    g = recs({"final": [(0.5, True), (0.1, False), (0.9, True)]})
    m = simulate_cascade(["final"], ThresholdConfig(), g, CascadeCosts.from_macs((5,)))
    assert m.accuracy == pytest.approx(2 / 3) and m.mean_macs == 5 and m.termination_rates == (1.0,)


def test_scalar_cost_attached():
    g = recs({"e": [(0.9, True)], "final": [(0.9, True)]})
    m = simulate_cascade(["e", "final"], ThresholdConfig((0.5,)), g, COSTS2, BaseMetrics(1.0, 3.0))
    assert m.scalar_cost == pytest.approx(0.3)


def test_errors():
    g = recs({"e": [(0.9, True)], "final": [(0.9, True)]})
    with pytest.raises(SimulationError):
        simulate_cascade(["x", "final"], ThresholdConfig((0.5,)), g, COSTS2)
    with pytest.raises(ValueError):
        simulate_cascade(["final"], ThresholdConfig((0.5,)), g, COSTS2)


def test_compare_identical_is_zero():
    g = recs({"e": [(0.9, True), (0.3, False)], "final": [(0.9, True), (0.3, True)]})
    sim = simulate_cascade(["e", "final"], ThresholdConfig((0.5,)), g, COSTS2)
    from exitplan.decision import PredictedMetrics

    pred = PredictedMetrics(sim.accuracy, sim.mean_macs, sim.mean_latency_s, sim.mean_energy_mj, sim.termination_rates)
    d = compare(pred, sim)
    assert d["max_abs_delta"] == 0.0
    assert all(v["rel_delta"] == 0.0 for k, v in d.items() if k != "max_abs_delta")


def test_factorial_fixture_matches_prediction():
    spec = {
        "mode": "independent-factorial",
        "strata": 13,
        "final_strata": 3,
        "locations": [{"id": "a", "accuracy": 0.6}, {"id": "b", "accuracy": 0.8}],
        "final": {"accuracy": 0.9},
    }
    groups = group_records(generate_records(spec, seed=4))
    profiles = profile_all(groups)
    costs = CascadeCosts((1.0, 2.0, 5.0), (0.1, 0.25, 0.5), (1.0, 2.0, 3.0))
    for t in ((0.4, 0.4), (0.6, 0.8), (0.9, 0.5)):
        cfg = ThresholdConfig(t)
        pred = predict_cascade(cfg, [profiles["a"], profiles["b"], profiles["final"]], costs)
        sim = simulate_cascade(["a", "b", "final"], cfg, groups, costs)
        assert compare(pred, sim)["max_abs_delta"] <= 1e-9


def test_correlated_fixture_reports_divergence():
    # the same confidence is reused at both exits; wrong answers are confident
    rows = [(0.9, False), (0.9, False), (0.2, True), (0.2, True)]
    g = recs({"a": rows, "b": rows, "final": [(1.0, True)] * 4})
    profiles = profile_all(g)
    cfg = ThresholdConfig((0.5, 0.5))
    costs = CascadeCosts.from_macs((1, 2, 3))
    pred = predict_cascade(cfg, [profiles["a"], profiles["b"], profiles["final"]], costs)
    sim = simulate_cascade(["a", "b", "final"], cfg, g, costs)
    d = compare(pred, sim)
    # predicted: 0.5*0 + 0.25*0 + 0.25*1 = 0.25; simulated: 2 wrong at a, 2 right at final = 0.5
    assert d["accuracy"]["abs_delta"] == pytest.approx(0.25)
    assert d["termination_rate_1"]["rel_delta"] == pytest.approx(1.0)


sample_rows = st.lists(
    st.tuples(st.floats(0, 1), st.booleans(), st.floats(0, 1), st.booleans(), st.booleans()),
    min_size=1,
    max_size=40,
)


@settings(max_examples=100)
@given(sample_rows, st.sampled_from([0.4, 0.55, 0.7, 0.85, 1.0]), st.sampled_from([0.4, 0.55, 0.7, 0.85, 1.0]))
def test_matches_naive_loop(rows, ta, tb):
    g = recs({
        "a": [(r[0], r[1]) for r in rows],
        "b": [(r[2], r[3]) for r in rows],
        "final": [(0.5, r[4]) for r in rows],
    })
    costs = CascadeCosts.from_macs((1, 2, 3))
    m = simulate_cascade(["a", "b", "final"], ThresholdConfig((ta, tb)), g, costs)
    hist = [0, 0, 0]
    correct = 0
    for ca, ka, cb, kb, kf in rows:
        if ca >= ta:
            hist[0] += 1; correct += ka
        elif cb >= tb:
            hist[1] += 1; correct += kb
        else:
            hist[2] += 1; correct += kf
    assert list(m.histogram) == hist
    assert m.accuracy == correct / len(rows)
    # raising exit a's threshold never adds terminations there
    if ta < 1.0:
        m2 = simulate_cascade(["a", "b", "final"], ThresholdConfig((1.0, tb)), g, costs)
        assert m2.histogram[0] <= m.histogram[0]
