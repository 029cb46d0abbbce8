"""Replay joint calibration records through a configured cascade."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .decision import BaseMetrics, CascadeCosts, PredictedMetrics, ThresholdConfig, Weights, scalar_cost


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimulatedMetrics:
    accuracy: float
    mean_macs: float
    mean_latency_s: float
    mean_energy_mj: float
    termination_rates: tuple[float, ...]
    histogram: tuple[int, ...]
    n_samples: int
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
            "histogram": list(self.histogram),
            "n_samples": self.n_samples,
            "scalar_cost": self.scalar_cost,
        }


def _joint_arrays(locations: Sequence[str], records: Mapping[str, Sequence]):
    missing = [loc for loc in locations if loc not in records]
    if missing:
        raise SimulationError(f"missing location records: {missing}")
    ids = [r.sample_id for r in records[locations[0]]]
    conf = np.empty((len(locations), len(ids)))
    corr = np.empty((len(locations), len(ids)), dtype=bool)
    for i, loc in enumerate(locations):
        recs = records[loc]
        if [r.sample_id for r in recs] != ids:
            raise SimulationError(f"sample set of {loc!r} differs from {locations[0]!r}")
        conf[i] = [r.confidence for r in recs]
        corr[i] = [r.correct for r in recs]
    return conf, corr


def simulate_cascade(
    locations: Sequence[str],
    config: ThresholdConfig,
    records: Mapping[str, Sequence],
    costs: CascadeCosts,
    base: BaseMetrics | None = None,
    weights: Weights | None = None,
) -> SimulatedMetrics:
    """Every sample stops at the first classifier whose confidence reaches its threshold.

    ``locations`` lists the record location ids of the early exits followed by
    the final classifier's.
    """
    k = len(config.early)
    if len(locations) != k + 1:
        raise ValueError("need one location id per classifier")
    conf, corr = _joint_arrays(locations, records)
    n = conf.shape[1]
    if n == 0:
        raise SimulationError("no samples to simulate")
    thresholds = np.array(config.thresholds)
    passes = conf >= thresholds[:, None]
    passes[-1] = True
    stop = np.argmax(passes, axis=0)
    hist = np.bincount(stop, minlength=k + 1)
    correct = corr[stop, np.arange(n)]
    rates = tuple(float(h) / n for h in hist)
    m = SimulatedMetrics(
        accuracy=float(correct.sum()) / n,
        mean_macs=math.fsum(h * c for h, c in zip(hist, costs.macs)) / n,
        mean_latency_s=math.fsum(h * c for h, c in zip(hist, costs.latency_s)) / n,
        mean_energy_mj=math.fsum(h * c for h, c in zip(hist, costs.energy_mj)) / n,
        termination_rates=rates,
        histogram=tuple(int(h) for h in hist),
        n_samples=n,
    )
    if base is not None:
        w = weights or Weights()
        m = replace(m, scalar_cost=scalar_cost(m, base, w.efficiency, w.accuracy))
    return m


_METRICS = ("accuracy", "mean_macs", "mean_latency_s", "mean_energy_mj")


def compare(pred: PredictedMetrics, sim: SimulatedMetrics) -> dict:
    """Absolute and relative deltas (simulated minus predicted) per metric."""
    out = {}
    pairs = [(name, getattr(pred, name), getattr(sim, name)) for name in _METRICS]
    pairs += [
        (f"termination_rate_{i}", p, s)
        for i, (p, s) in enumerate(zip(pred.termination_rates, sim.termination_rates))
    ]
    for name, p, s in pairs:
        delta = s - p
        out[name] = {
            "predicted": p,
            "simulated": s,
            "abs_delta": abs(delta),
            "rel_delta": abs(delta) / abs(p) if p else (0.0 if delta == 0 else None),
        }
    out["max_abs_delta"] = max(v["abs_delta"] for v in out.values())
    return out
