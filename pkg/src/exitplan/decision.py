"""Per-exit confidence threshold search.

The threshold space of an architecture with k early exits is a layered DAG:
an input node, one layer of grid nodes per early exit, and a final node whose
threshold is fixed at zero. Every input-to-final path is one threshold
configuration. Cascade metrics are predicted from per-exit profiles under the
assumption that exits err independently, so the expected cost of the samples
reaching an exit depends only on that exit's node and on what happens
downstream of it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import networkx as nx
import numpy as np

from .hw_model import Platform, energy_estimate, segment_latencies, transfer_latencies

GRID_MIN = 0.40
GRID_MAX = 1.00
GRID_POINTS = 13
TIE_TOL = 1e-12
MAX_EXHAUSTIVE_EXITS = 5


def _clean(x: float) -> float:
    # keeps 0.4 + 4 * 0.05 equal to the literal 0.6
    return round(float(x), 12)


@dataclass(frozen=True)
class ThresholdGrid:
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(_clean(v) for v in self.values)
        if not vals:
            raise ValueError("threshold grid is empty")
        if any(v < 0 or v > 1 for v in vals):
            raise ValueError("thresholds must lie in [0, 1]")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("threshold grid must be strictly increasing")
        object.__setattr__(self, "values", vals)

    @classmethod
    def linear(cls, lo: float = GRID_MIN, hi: float = GRID_MAX, points: int = GRID_POINTS):
        if points == 1:
            return cls((lo,))
        return cls(tuple(np.linspace(lo, hi, points)))

    @property
    def step(self) -> float:
        if len(self.values) < 2:
            return 0.0
        return _clean((self.values[-1] - self.values[0]) / (len(self.values) - 1))

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


@dataclass(frozen=True)
class ThresholdConfig:
    """Thresholds of the early exits; the final classifier always uses 0."""

    early: tuple[float, ...] = ()

    @property
    def thresholds(self) -> tuple[float, ...]:
        return self.early + (0.0,)

    def scaled(self, factor: float) -> "ThresholdConfig":
        # rounding must not lift a shrunk threshold above the original
        return ThresholdConfig(tuple(min(t, _clean(t * factor)) for t in self.early))


@dataclass(frozen=True)
class Weights:
    efficiency: float = 0.9
    accuracy: float = 0.1

    def __post_init__(self):
        if self.efficiency < 0 or self.accuracy < 0:
            raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class BaseMetrics:
    """Reference figures of the unmodified backbone."""

    accuracy: float
    macs: float
    latency_s: float = 0.0
    energy_mj: float = 0.0


@dataclass(frozen=True)
class CascadeCosts:
    """Cumulative cost of a sample that terminates at classifier i."""

    macs: tuple[float, ...]
    latency_s: tuple[float, ...]
    energy_mj: tuple[float, ...]

    @classmethod
    def from_macs(cls, macs: Sequence[float]):
        zeros = tuple(0.0 for _ in macs)
        return cls(tuple(float(m) for m in macs), zeros, zeros)

    def __len__(self):
        return len(self.macs)


def cascade_costs(mapping, plat: Platform) -> CascadeCosts:
    lats = segment_latencies(mapping, plat)
    xfer = transfer_latencies(mapping, plat)
    macs, lat, energy = [], [], []
    for i, seg in enumerate(mapping.segments):
        macs.append(float(sum(s.macs for s in mapping.segments[: i + 1])))
        lat.append(math.fsum(lats[: i + 1]) + math.fsum(xfer[:i]))
        energy.append(energy_estimate(mapping, lats, plat, i + 1))
    return CascadeCosts(tuple(macs), tuple(lat), tuple(energy))


@dataclass(frozen=True)
class PredictedMetrics:
    accuracy: float
    mean_macs: float
    mean_latency_s: float
    mean_energy_mj: float
    termination_rates: tuple[float, ...]
    scalar_cost: float | None = None

    @property
    def early_termination(self) -> float:
        return math.fsum(self.termination_rates[:-1])

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "mean_macs": self.mean_macs,
            "mean_latency_s": self.mean_latency_s,
            "mean_energy_mj": self.mean_energy_mj,
            "termination_rates": list(self.termination_rates),
            "early_termination": self.early_termination,
            "scalar_cost": self.scalar_cost,
        }


class NoViableConfiguration(ValueError):
    pass


# ---------------------------------------------------------------------------
# prediction and cost


def predict_cascade(
    config: ThresholdConfig,
    profiles: Sequence,
    costs: CascadeCosts,
    base: BaseMetrics | None = None,
    weights: Weights | None = None,
) -> PredictedMetrics:
    """Expected cascade metrics when exits behave independently.

    ``profiles`` holds one profile per early exit followed by the final
    classifier's profile.
    """
    k = len(config.early)
    if len(profiles) != k + 1 or len(costs) != k + 1:
        raise ValueError("need one profile and one cost entry per classifier")
    survive = 1.0
    rates, acc, macs, lat, energy = [], [], [], [], []
    for i, t in enumerate(config.thresholds):
        p = 1.0 if i == k else profiles[i].pass_rate(t)
        r = survive * p
        rates.append(r)
        if r > 0:
            a = profiles[i].conditional_accuracy(t)
            if a is None:
                raise NoViableConfiguration(f"classifier {i} has no passing samples at threshold {t}")
            acc.append(r * a)
        macs.append(r * costs.macs[i])
        lat.append(r * costs.latency_s[i])
        energy.append(r * costs.energy_mj[i])
        survive *= 1.0 - p
    m = PredictedMetrics(
        accuracy=math.fsum(acc),
        mean_macs=math.fsum(macs),
        mean_latency_s=math.fsum(lat),
        mean_energy_mj=math.fsum(energy),
        termination_rates=tuple(rates),
    )
    if base is not None:
        w = weights or Weights()
        m = replace(m, scalar_cost=scalar_cost(m, base, w.efficiency, w.accuracy))
    return m


def _cost(mean_macs, accuracy, base: BaseMetrics, w: Weights) -> float:
    return w.efficiency * (mean_macs / base.macs) + w.accuracy * max(0.0, base.accuracy - accuracy)


def scalar_cost(m, base: BaseMetrics, w_eff: float = 0.9, w_acc: float = 0.1) -> float:
    """Normalised mean MACs plus the accuracy drop below the backbone; lower is better."""
    if w_eff < 0 or w_acc < 0:
        raise ValueError("weights must be non-negative")
    return _cost(m.mean_macs, m.accuracy, base, Weights(w_eff, w_acc))


# ---------------------------------------------------------------------------
# search graph


def _grids_for(n_exits: int, grid) -> list[tuple[float, ...]]:
    if isinstance(grid, ThresholdGrid):
        return [grid.values] * n_exits
    grids = [tuple(_clean(v) for v in g) for g in grid]
    if len(grids) != n_exits:
        raise ValueError("need one grid per early exit")
    return grids


def build_search_graph(arch, grid: ThresholdGrid | Sequence[Sequence[float]] | None = None) -> nx.DiGraph:
    """Layered DAG of threshold choices; nodes are (exit index, grid index)."""
    n_exits = arch if isinstance(arch, int) else arch.n_exits
    grids = _grids_for(n_exits, grid or ThresholdGrid.linear())
    g = nx.DiGraph()
    g.add_node("input", layer=-1)
    layers: list[list] = [["input"]]
    for i, values in enumerate(grids):
        layer = []
        for j, t in enumerate(values):
            g.add_node((i, j), layer=i, exit=i, threshold=t)
            layer.append((i, j))
        layers.append(layer)
    g.add_node("final", layer=n_exits, threshold=0.0)
    layers.append(["final"])
    for a, b in zip(layers, layers[1:]):
        g.add_edges_from(itertools.product(a, b))
    g.graph["layers"] = layers
    g.graph["n_exits"] = n_exits
    return g


def count_configurations(graph: nx.DiGraph) -> int:
    return math.prod(len(layer) for layer in graph.graph["layers"][1:-1])


def _graph_grids(graph: nx.DiGraph) -> list[list[float]]:
    return [[graph.nodes[n]["threshold"] for n in layer] for layer in graph.graph["layers"][1:-1]]


def _node_table(grids, profiles):
    """(threshold, pass rate, conditional accuracy) of every usable node per exit."""
    table = []
    for i, values in enumerate(grids):
        usable = []
        for t in values:
            p = profiles[i].pass_rate(t)
            if p > 0:
                usable.append((t, p, profiles[i].conditional_accuracy(t)))
        if not usable:
            raise NoViableConfiguration(f"exit {i} has no usable threshold (no samples pass any grid value)")
        table.append(usable)
    return table


def _pareto(labels: list[tuple[float, float]]) -> list[tuple[float, float]]:
    # keep (macs, accuracy) pairs not weakly dominated by another
    labels.sort(key=lambda x: (x[0], -x[1]))
    out = []
    best_acc = -math.inf
    for e, a in labels:
        if a > best_acc:
            out.append((e, a))
            best_acc = a
    return out


def solve_thresholds(
    graph: nx.DiGraph,
    profiles: Sequence,
    costs: CascadeCosts,
    base: BaseMetrics,
    weights: Weights | None = None,
) -> tuple[ThresholdConfig, PredictedMetrics]:
    """Optimal threshold configuration by backward relaxation over the layers.

    Each node keeps the Pareto set of (expected MACs, expected accuracy) pairs
    reachable from it, per surviving sample. Both quantities compose affinely
    with non-negative weights, so the set at the input node contains the
    optimum of any cost that grows with MACs and falls with accuracy. A
    forward pass then picks, exit by exit, the lowest threshold that can still
    reach the optimum, which reproduces the exhaustive tie-break.
    """
    w = weights or Weights()
    k = graph.graph["n_exits"]
    if k == 0:
        cfg = ThresholdConfig()
        return cfg, predict_cascade(cfg, profiles, costs, base, w)
    table = _node_table(_graph_grids(graph), profiles)
    a_final = profiles[k].conditional_accuracy(0.0)
    if a_final is None:
        raise NoViableConfiguration("final classifier has no records")

    frontiers: list[list[tuple[float, float]]] = [[] for _ in range(k + 1)]
    frontiers[k] = [(costs.macs[k], a_final)]
    for i in range(k - 1, -1, -1):
        c = costs.macs[i]
        labels = []
        for _, p, a in table[i]:
            q = 1.0 - p
            for e_next, a_next in frontiers[i + 1]:
                labels.append((p * c + q * e_next, p * a + q * a_next))
        frontiers[i] = _pareto(labels)

    def cost_of(e, a):
        return _cost(e, a, base, w)

    best = min(cost_of(e, a) for e, a in frontiers[0])
    chosen = []
    e_pre = a_pre = 0.0
    survive = 1.0
    for i in range(k):
        c = costs.macs[i]
        pick = None
        fallback = None
        for t, p, a in table[i]:
            e1 = e_pre + survive * p * c
            a1 = a_pre + survive * p * a
            s1 = survive * (1.0 - p)
            reach = min(cost_of(e1 + s1 * e, a1 + s1 * acc) for e, acc in frontiers[i + 1])
            if reach <= best + TIE_TOL:
                pick = (t, e1, a1, s1)
                break
            if fallback is None or reach < fallback[0]:
                fallback = (reach, (t, e1, a1, s1))
        if pick is None:
            pick = fallback[1]
        t, e_pre, a_pre, survive = pick
        chosen.append(t)
    cfg = ThresholdConfig(tuple(chosen))
    return cfg, predict_cascade(cfg, profiles, costs, base, w)


def exhaustive_thresholds(
    arch,
    grid,
    profiles: Sequence,
    costs: CascadeCosts,
    base: BaseMetrics,
    weights: Weights | None = None,
    return_count: bool = False,
):
    """Brute-force minimum over every grid configuration.

    Ties within ``TIE_TOL`` go to the lexicographically smallest threshold
    tuple (lower thresholds first, earlier exits compared first).
    """
    w = weights or Weights()
    n_exits = arch if isinstance(arch, int) else arch.n_exits
    if n_exits > MAX_EXHAUSTIVE_EXITS:
        raise ValueError(f"exhaustive search limited to {MAX_EXHAUSTIVE_EXITS} early exits")
    grids = _grids_for(n_exits, grid if grid is not None else ThresholdGrid.linear())
    table = _node_table(grids, profiles)
    a_final = profiles[n_exits].conditional_accuracy(0.0)
    scored = []
    for combo in itertools.product(*table):
        survive = 1.0
        macs, acc = [], []
        for i, (_, p, a) in enumerate(combo):
            r = survive * p
            macs.append(r * costs.macs[i])
            acc.append(r * a)
            survive *= 1.0 - p
        macs.append(survive * costs.macs[n_exits])
        acc.append(survive * a_final)
        scored.append((_cost(math.fsum(macs), math.fsum(acc), base, w), combo))
    best = min(s for s, _ in scored)
    for s, combo in scored:
        if s <= best + TIE_TOL:
            cfg = ThresholdConfig(tuple(t for t, _, _ in combo))
            break
    result = (cfg, predict_cascade(cfg, profiles, costs, base, w))
    if return_count:
        return result + (len(scored),)
    return result


def refine_thresholds(
    best: ThresholdConfig,
    profiles: Sequence,
    costs: CascadeCosts,
    base: BaseMetrics,
    weights: Weights | None = None,
    resolution: int = 21,
    coarse_step: float = 0.05,
) -> tuple[ThresholdConfig, PredictedMetrics]:
    """Re-solve on a finer grid spanning one coarse step either side of each threshold.

    The coarse choice stays in every refined grid, so the cost never increases.
    """
    w = weights or Weights()
    if resolution <= 1 or not best.early:
        return best, predict_cascade(best, profiles, costs, base, w)
    grids = []
    for t in best.early:
        pts = {_clean(v) for v in np.linspace(t - coarse_step, t + coarse_step, resolution)}
        pts.add(_clean(t))
        grids.append(sorted(v for v in pts if 0.0 <= v <= 1.0))
    graph = build_search_graph(len(best.early), grids)
    return solve_thresholds(graph, profiles, costs, base, w)
