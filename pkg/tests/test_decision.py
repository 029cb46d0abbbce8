import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exitplan.decision import (
    BaseMetrics,
    CascadeCosts,
    NoViableConfiguration,
    PredictedMetrics,
    ThresholdConfig,
    ThresholdGrid,
    Weights,
    build_search_graph,
    count_configurations,
    exhaustive_thresholds,
    predict_cascade,
    refine_thresholds,
    scalar_cost,
    solve_thresholds,
)
from exitplan.profiles import ExitProfile

from conftest import random_profile

GRID = ThresholdGrid.linear()


def const_profile(p, a, n=100):
    """Pass rate p at every threshold in (0, 1], accuracy a among passers."""
    n_pass = round(p * n)
    n_corr = round(a * n_pass)
    conf = [1.0] * n_pass + [0.0] * (n - n_pass)
    corr = [True] * n_corr + [False] * (n_pass - n_corr) + [True] * (n - n_pass)
    return ExitProfile.from_pairs("x", conf, corr)


def random_case(rng, k):
    profiles = [random_profile(rng, loc=f"e{i}") for i in range(k)]
    profiles.append(random_profile(rng, loc="final"))
    steps = rng.integers(1, 1000, size=k + 1)
    costs = CascadeCosts.from_macs(np.cumsum(steps))
    base = BaseMetrics(accuracy=float(rng.uniform(0.3, 1.0)), macs=float(costs.macs[-1]))
    w = Weights(*rng.dirichlet([1, 1]))
    return profiles, costs, base, w


def test_grid_values():
    assert GRID.values == tuple(round(0.4 + 0.05 * i, 12) for i in range(13))
    assert 0.6 in GRID.values
    assert GRID.step == 0.05


def test_search_graph_sizes():
    g2 = build_search_graph(2)
    assert g2.number_of_nodes() == 28
    assert count_configurations(g2) == 169
    g0 = build_search_graph(0)
    assert g0.number_of_nodes() == 2
    assert list(g0.edges) == [("input", "final")]
    for k in range(5):
        assert build_search_graph(k).number_of_nodes() == 13 * k + 2


def test_exhaustive_evaluation_counts():
    rng = np.random.default_rng(1)
    for k, expected in ((1, 13), (2, 169)):
        profiles = [const_profile(0.5, 0.9) for _ in range(k)] + [const_profile(1.0, 0.95)]
        costs = CascadeCosts.from_macs(range(1, k + 2))
        *_, n = exhaustive_thresholds(k, GRID, profiles, costs, BaseMetrics(0.95, k + 1), return_count=True)
        assert n == expected
    del rng


def test_predict_examples():
    final = const_profile(1.0, 0.7)
    costs = CascadeCosts((10.0, 100.0), (0.1, 1.0), (1.0, 10.0))
    m = predict_cascade(ThresholdConfig((0.5,)), [const_profile(1.0, 0.8), final], costs)
    assert m.termination_rates == (1.0, 0.0)
    assert (m.accuracy, m.mean_macs, m.mean_latency_s, m.mean_energy_mj) == (0.8, 10.0, 0.1, 1.0)

    m = predict_cascade(
        ThresholdConfig((0.5, 0.5)),
        [const_profile(0.5, 1.0), const_profile(1.0, 0.8), final],
        CascadeCosts.from_macs((1, 2, 3)),
    )
    assert m.termination_rates == (0.5, 0.5, 0.0)
    assert m.accuracy == pytest.approx(0.9)

    m = predict_cascade(ThresholdConfig((0.5,)), [const_profile(0.0, 0.0), final], costs)
    assert m.termination_rates == (0.0, 1.0)
    assert (m.accuracy, m.mean_macs) == (0.7, 100.0)


def test_backbone_only_reproduces_base():
    final = const_profile(1.0, 0.93)
    m = predict_cascade(ThresholdConfig(), [final], CascadeCosts((5.0,), (0.2,), (3.0,)))
    assert (m.accuracy, m.mean_macs, m.mean_latency_s, m.mean_energy_mj) == (0.93, 5.0, 0.2, 3.0)
    assert m.termination_rates == (1.0,)


def test_scalar_cost_examples():
    base = BaseMetrics(0.9741, 100.0)
    same = PredictedMetrics(0.9741, 100.0, 0, 0, (1.0,))
    assert scalar_cost(same, base) == pytest.approx(0.9)
    m = PredictedMetrics(0.9741 - 0.1296, 40.33, 0, 0, (1.0,))
    assert scalar_cost(m, base, 0.9, 0.1) == pytest.approx(0.37593)
    assert round(scalar_cost(m, base, 0.9, 0.1), 4) == 0.3759
    assert scalar_cost(m, base, 1.0, 0.0) == pytest.approx(0.4033)
    with pytest.raises(ValueError):
        scalar_cost(m, base, -1, 0)


def test_pure_efficiency_weight_terminates_most():
    rng = np.random.default_rng(3)
    profiles, costs, base, _ = random_case(rng, 2)
    cfg, m = solve_thresholds(build_search_graph(2), profiles, costs, base, Weights(1.0, 0.0))
    # lowest usable threshold at every exit
    for t, p in zip(cfg.early, profiles):
        usable = [g for g in GRID.values if p.pass_rate(g) > 0]
        assert t == usable[0]


def test_k0_solution():
    final = const_profile(1.0, 0.9)
    cfg, m = solve_thresholds(build_search_graph(0), [final], CascadeCosts.from_macs((7,)), BaseMetrics(0.9, 7))
    assert cfg.early == ()
    assert m.mean_macs == 7 and m.accuracy == 0.9
    assert m.scalar_cost == pytest.approx(0.9)


def test_speech_style_profile_selects_0_6():
    # wrong answers sit just below 0.6, correct ones at or just above it,
    # and almost nothing is more confident than 0.62
    conf = [0.45] * 20 + [0.55] * 20 + [0.6] * 30 + [0.62] * 25 + [0.9] * 5
    corr = [False] * 40 + [True] * 60
    exit0 = ExitProfile.from_pairs("b1", conf, corr)
    final = const_profile(1.0, 0.95)
    costs = CascadeCosts.from_macs((0.3, 1.0))
    base = BaseMetrics(0.95, 1.0)
    w = Weights(0.5, 0.5)
    for t in (0.6, 0.65, 0.7):
        assert exit0.conditional_accuracy(t) == 1.0
    assert exit0.pass_rate(0.6) == 0.6 and exit0.pass_rate(0.65) == 0.05
    cfg, m = solve_thresholds(build_search_graph(1), [exit0, final], costs, base, w)
    assert cfg.early == (0.6,)
    ex_cfg, ex_m = exhaustive_thresholds(1, GRID, [exit0, final], costs, base, w)
    assert ex_cfg == cfg
    assert m.scalar_cost == pytest.approx(0.29)


def test_ties_go_to_lowest_thresholds():
    # every threshold behaves identically; the lowest grid point must win
    profiles = [const_profile(0.5, 0.9), const_profile(0.5, 0.9), const_profile(1.0, 0.9)]
    costs = CascadeCosts.from_macs((1, 2, 3))
    cfg, _ = solve_thresholds(build_search_graph(2), profiles, costs, BaseMetrics(0.9, 3))
    assert cfg.early == (0.4, 0.4)


def test_unusable_exit_raises():
    never = ExitProfile.from_pairs("x", [0.1, 0.2], [True, False])
    with pytest.raises(NoViableConfiguration):
        solve_thresholds(build_search_graph(1), [never, const_profile(1, 1)], CascadeCosts.from_macs((1, 2)), BaseMetrics(1, 2))


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_solver_matches_exhaustive(seed, k):
    rng = np.random.default_rng(seed)
    profiles, costs, base, w = random_case(rng, k)
    try:
        ex_cfg, ex_m = exhaustive_thresholds(k, GRID, profiles, costs, base, w)
    except NoViableConfiguration:
        with pytest.raises(NoViableConfiguration):
            solve_thresholds(build_search_graph(k), profiles, costs, base, w)
        return
    cfg, m = solve_thresholds(build_search_graph(k), profiles, costs, base, w)
    assert abs(m.scalar_cost - ex_m.scalar_cost) <= 1e-9
    assert cfg == ex_cfg


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.data())
def test_prediction_invariants(seed, k, data):
    rng = np.random.default_rng(seed)
    profiles, costs, base, _ = random_case(rng, k)
    early = tuple(data.draw(st.sampled_from(GRID.values)) for _ in range(k))
    try:
        m = predict_cascade(ThresholdConfig(early), profiles, costs)
    except NoViableConfiguration:
        return
    assert math.isclose(math.fsum(m.termination_rates), 1.0, abs_tol=1e-12)

    # inserting an exit that never fires changes nothing else
    pos = data.draw(st.integers(0, k))
    never = ExitProfile.from_pairs("z", [0.0], [False])
    p2 = profiles[:pos] + [never] + profiles[pos:]
    c2 = CascadeCosts.from_macs(costs.macs[:pos] + (costs.macs[pos],) + costs.macs[pos:])
    m2 = predict_cascade(ThresholdConfig(early[:pos] + (0.5,) + early[pos:]), p2, c2)
    assert m2.termination_rates[pos] == 0.0
    assert m2.termination_rates[:pos] + m2.termination_rates[pos + 1:] == pytest.approx(m.termination_rates, abs=1e-15)
    assert m2.accuracy == pytest.approx(m.accuracy, abs=1e-12)

    # raising one threshold
    i = data.draw(st.integers(0, k - 1))
    higher = [t for t in GRID.values if t > early[i]]
    if higher:
        raised = early[:i] + (data.draw(st.sampled_from(higher)),) + early[i + 1:]
        try:
            m3 = predict_cascade(ThresholdConfig(raised), profiles, costs)
        except NoViableConfiguration:
            return
        assert m3.termination_rates[i] <= m.termination_rates[i] + 1e-15
        assert m3.mean_macs >= m.mean_macs - 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_refinement_never_increases_cost(seed, k):
    rng = np.random.default_rng(seed)
    profiles, costs, base, w = random_case(rng, k)
    try:
        cfg, m = solve_thresholds(build_search_graph(k), profiles, costs, base, w)
    except NoViableConfiguration:
        return
    rcfg, rm = refine_thresholds(cfg, profiles, costs, base, w, resolution=21)
    assert rm.scalar_cost <= m.scalar_cost + 1e-12


def test_refinement_grid_and_identities():
    p = const_profile(0.5, 0.9)
    final = const_profile(1.0, 0.95)
    costs = CascadeCosts.from_macs((1, 2))
    base = BaseMetrics(0.95, 2)
    best = ThresholdConfig((0.6,))
    same, _ = refine_thresholds(best, [p, final], costs, base, resolution=1)
    assert same == best
    empty, m = refine_thresholds(ThresholdConfig(), [final], CascadeCosts.from_macs((2,)), base)
    assert empty == ThresholdConfig() and m.mean_macs == 2
    # constant profile: every refined point ties, the lowest (0.55) wins
    refined, _ = refine_thresholds(best, [p, final], costs, base, resolution=21)
    assert refined.early == (0.55,)
    expected = [round(0.55 + 0.005 * i, 12) for i in range(21)]
    g = build_search_graph(1, [expected])
    assert [g.nodes[n]["threshold"] for n in g.graph["layers"][1]] == expected


def test_correction_keeps_config_shape():
    cfg = ThresholdConfig((0.6, 0.8))
    assert cfg.thresholds == (0.6, 0.8, 0.0)
    assert cfg.scaled(0.5).early == (0.3, 0.4)
