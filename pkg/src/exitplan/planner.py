"""End-to-end search: enumerate, prune, solve thresholds per architecture, rank, report."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping

from .decision import (
    BaseMetrics,
    CascadeCosts,
    PredictedMetrics,
    ThresholdConfig,
    ThresholdGrid,
    Weights,
    build_search_graph,
    cascade_costs,
    count_configurations,
    predict_cascade,
    refine_thresholds,
    solve_thresholds,
)
from .exits import DEFAULT_MAX_FRACTION, build_exit_candidates, check_budget, enumerate_exit_locations
from .graph_ir import extract_classifier_blueprint, fuse_blocks, parse_model_graph
from .hw_model import Platform, memory_fit, parse_platform, segment_latency
from .profiles import (
    DEFAULT_CORRECTION,
    FINAL_LOCATION,
    apply_correction,
    default_viability_floor,
    load_records,
    profile_all,
    viability_filter,
)
from .search_space import Architecture, Mapping as ProcMapping, check_constraints, enumerate_architectures, map_to_processors
from .simulate import compare, simulate_cascade

log = logging.getLogger(__name__)

REPORT_VERSION = 1


class InfeasibleError(RuntimeError):
    """No architecture survives the constraints."""


@dataclass
class PlanOptions:
    weights: Weights = field(default_factory=Weights)
    grid_min: float = 0.40
    grid_max: float = 1.00
    grid_points: int = 13
    correction: float = DEFAULT_CORRECTION
    source: str = "validation"  # or "training"
    refine: int = 0
    seed: int = 0
    workers: int = 1
    max_branch_fraction: float = DEFAULT_MAX_FRACTION
    viability_floor: float | None = None
    baseline_processor: str | None = None

    @property
    def grid(self) -> ThresholdGrid:
        return ThresholdGrid.linear(self.grid_min, self.grid_max, self.grid_points)

    def echo(self) -> dict:
        d = asdict(self)
        d["weights"] = {"efficiency": self.weights.efficiency, "accuracy": self.weights.accuracy}
        d["grid"] = list(self.grid.values)
        d["correction_applied"] = self.source == "training"
        return d


@dataclass
class Candidate:
    arch: Architecture
    exit_ids: tuple[str, ...]
    mapping: ProcMapping
    costs: CascadeCosts
    config: ThresholdConfig | None = None
    raw_config: ThresholdConfig | None = None
    metrics: PredictedMetrics | None = None
    configurations: int = 0


# ---------------------------------------------------------------------------
# worker plumbing; profiles are shipped once per process

_CTX: dict = {}


def _init_worker(ctx):
    _CTX.clear()
    _CTX.update(ctx)


def _solve_one(task):
    exit_ids, costs = task
    ctx = _CTX
    profs = [ctx["profiles"][e] for e in exit_ids] + [ctx["profiles"][FINAL_LOCATION]]
    graph = build_search_graph(len(exit_ids), ctx["grid"])
    raw, metrics = solve_thresholds(graph, profs, costs, ctx["base"], ctx["weights"])
    config = raw
    if ctx["correction"] is not None:
        config = apply_correction(raw, ctx["correction"])
        metrics = predict_cascade(config, profs, costs, ctx["base"], ctx["weights"])
    return raw, config, metrics, count_configurations(graph)


# ---------------------------------------------------------------------------


def _baseline(g_macs: int, bg, plat: Platform, accuracy: float, proc_id: str | None) -> tuple[BaseMetrics, str]:
    params = sum(b.params_bytes for b in bg.blocks)
    peak = max(b.activation_bytes for b in bg.blocks)
    if proc_id is None:
        fitting = [p for p in plat.processors if memory_fit(params, peak, p)] or list(plat.processors)
        proc = max(fitting, key=lambda p: p.macs_per_second)
    else:
        proc = plat.processor(proc_id)
    lat = segment_latency(g_macs, proc)
    others = math.fsum(p.sleep_power_mw for p in plat.processors if p.id != proc.id)
    energy = lat * proc.active_power_mw + lat * others
    return BaseMetrics(accuracy=accuracy, macs=float(g_macs), latency_s=lat, energy_mj=energy), proc.id


def _mapping_doc(mapping: ProcMapping, bg) -> list[dict]:
    return [
        {
            "processor": s.processor_id,
            "block_span": [s.start, s.stop],
            "first_block": bg.blocks[s.start].id,
            "last_block": bg.blocks[s.stop - 1].id,
            "exit": s.exit_id,
            "backbone_macs": s.backbone_macs,
            "branch_macs": s.branch_macs,
            "params_bytes": s.params_bytes,
            "peak_activation_bytes": s.peak_activation_bytes,
            "out_bytes": s.out_bytes,
        }
        for s in mapping.segments
    ]


def _deltas(m, base: BaseMetrics) -> dict:
    def rel(x, b):
        return (x - b) / b if b else None

    return {
        "efficiency_gain": 1.0 - m.mean_macs / base.macs,
        "accuracy_delta": m.accuracy - base.accuracy,
        "mean_macs_rel": rel(m.mean_macs, base.macs),
        "mean_latency_rel": rel(m.mean_latency_s, base.latency_s),
        "mean_energy_rel": rel(m.mean_energy_mj, base.energy_mj),
    }


def run_search(model_doc: Mapping, hardware_doc: Mapping, records, options: PlanOptions | None = None) -> dict:
    """Search the augmentation space and return the plan report as a dict.

    ``records`` is a path, CSV text, or records already grouped by location.
    Raises :class:`InfeasibleError` when every architecture is rejected.
    """
    opt = options or PlanOptions()
    if opt.source not in ("validation", "training"):
        raise ValueError("source must be 'validation' or 'training'")
    if opt.source == "training" and not 0 < opt.correction <= 1:
        raise ValueError("correction factor must lie in (0, 1]")

    g = parse_model_graph(model_doc)
    bg = fuse_blocks(g)
    bp = extract_classifier_blueprint(g)
    plat = parse_platform(hardware_doc)
    groups = records if isinstance(records, Mapping) else load_records(records)
    if FINAL_LOCATION not in groups:
        raise ValueError(f"calibration records lack the final classifier (location_id {FINAL_LOCATION!r})")
    profiles = profile_all(groups, opt.source)

    locations = enumerate_exit_locations(bg)
    unknown = sorted(set(groups) - set(locations) - {FINAL_LOCATION})
    if unknown:
        raise ValueError(f"records reference unknown locations: {unknown[:5]}")
    candidates = build_exit_candidates(bg, bp, value_bytes=g.value_bytes)
    floor = opt.viability_floor if opt.viability_floor is not None else default_viability_floor(bp.num_classes)
    viable = {
        loc: loc in profiles and viability_filter(profiles[loc], floor)
        for loc in locations
    }
    base, base_proc = _baseline(g.total_macs, bg, plat, profiles[FINAL_LOCATION].standalone_accuracy, opt.baseline_processor)

    archs = enumerate_architectures(locations, plat)
    pruned, survivors = [], []
    for a in archs:
        exit_ids = tuple(locations[i] for i in a.exit_locations)
        mapping = map_to_processors(a, plat, bg, candidates, locations)
        reason = check_constraints(mapping, plat)
        if reason is None:
            bad = [e for e in exit_ids if not viable[e]]
            if bad:
                missing = [e for e in bad if e not in profiles]
                reason = (
                    f"viability: no calibration records for {missing}" if missing
                    else f"viability: exits {bad} below accuracy floor {floor:.4g}"
                )
        if reason is None and exit_ids and not check_budget(
            [candidates[e] for e in exit_ids], g.total_macs, opt.max_branch_fraction
        ):
            reason = f"budget: exit branches reach {opt.max_branch_fraction:.2%} of backbone MACs"
        if reason is not None:
            pruned.append({"architecture": a.id, "exits": list(exit_ids), "reason": reason})
            continue
        survivors.append(Candidate(a, exit_ids, mapping, cascade_costs(mapping, plat)))
    log.info("%d architectures enumerated, %d survive", len(archs), len(survivors))

    if not survivors:
        kinds: dict[str, int] = {}
        for p in pruned:
            kind = p["reason"].split(":", 1)[0]
            kinds[kind] = kinds.get(kind, 0) + 1
        binding = max(sorted(kinds), key=lambda k: kinds[k])
        raise InfeasibleError(
            f"no architecture satisfies the constraints; binding constraint: {binding} "
            f"({kinds[binding]} of {len(archs)} rejected; "
            + ", ".join(f"{k}={v}" for k, v in sorted(kinds.items()))
            + ")"
        )

    ctx = {
        "profiles": profiles,
        "grid": opt.grid,
        "base": base,
        "weights": opt.weights,
        "correction": opt.correction if opt.source == "training" else None,
    }
    tasks = [(c.exit_ids, c.costs) for c in survivors]
    if opt.workers > 1 and len(tasks) > 1:
        chunk = max(1, len(tasks) // (opt.workers * 8))
        with ProcessPoolExecutor(opt.workers, initializer=_init_worker, initargs=(ctx,)) as pool:
            results = list(pool.map(_solve_one, tasks, chunksize=chunk))
    else:
        _init_worker(ctx)
        results = [_solve_one(t) for t in tasks]

    evaluated = []
    for cand, res in zip(survivors, results):
        cand.raw_config, cand.config, cand.metrics, cand.configurations = res
        evaluated.append(cand)

    order = sorted(range(len(evaluated)), key=lambda i: (evaluated[i].metrics.scalar_cost, i))
    ranked = [evaluated[i] for i in order]
    best = ranked[0]

    profs = [profiles[e] for e in best.exit_ids] + [profiles[FINAL_LOCATION]]
    refined = False
    if opt.refine > 1 and best.exit_ids:
        raw, _ = refine_thresholds(
            best.raw_config, profs, best.costs, base, opt.weights, opt.refine, opt.grid.step
        )
        config = apply_correction(raw, opt.correction) if ctx["correction"] is not None else raw
        metrics = predict_cascade(config, profs, best.costs, base, opt.weights)
        if metrics.scalar_cost <= best.metrics.scalar_cost:
            best.raw_config, best.config, best.metrics = raw, config, metrics
            refined = True

    sim_locs = list(best.exit_ids) + [FINAL_LOCATION]
    sim = simulate_cascade(sim_locs, best.config, groups, best.costs, base, opt.weights)
    backbone_survives = any(not c.arch.exit_locations for c in evaluated)

    chosen = {
        "architecture": best.arch.id,
        "exit_locations": list(best.arch.exit_locations),
        "exits": list(best.exit_ids),
        "zero_augmentation": not best.exit_ids,
        "mapping": _mapping_doc(best.mapping, bg),
        "thresholds": list(best.config.thresholds),
        "thresholds_uncorrected": list(best.raw_config.thresholds),
        "refined": refined,
        "worst_case_latency_s": best.costs.latency_s[-1],
        "exit_branches": {e: candidates[e].describe() for e in best.exit_ids},
        "exit_branch_macs": {e: candidates[e].branch_macs for e in best.exit_ids},
        "exit_curves": {
            e: {**profiles[e].curves(opt.grid.values), "standalone_accuracy": profiles[e].standalone_accuracy}
            for e in best.exit_ids
        },
        "predicted": best.metrics.to_dict(),
        "simulated": sim.to_dict(),
        "divergence": compare(best.metrics, sim),
        "deltas": _deltas(best.metrics, base),
    }
    report = {
        "version": REPORT_VERSION,
        "model": {
            "name": g.name,
            "layers": len(g),
            "blocks": len(bg),
            "macs": g.total_macs,
            "num_classes": bp.num_classes,
            "blueprint": bp.describe(),
            "locations": locations,
            "non_viable_locations": [l for l in locations if not viable[l]],
        },
        "platform": plat.to_doc(),
        "options": opt.echo(),
        "baseline": {**asdict(base), "processor": base_proc},
        "chosen": chosen,
        "candidates": [
            {
                "rank": r,
                "architecture": c.arch.id,
                "exits": list(c.exit_ids),
                "thresholds": list(c.config.thresholds),
                "scalar_cost": c.metrics.scalar_cost,
                "accuracy": c.metrics.accuracy,
                "mean_macs": c.metrics.mean_macs,
                "mean_latency_s": c.metrics.mean_latency_s,
                "mean_energy_mj": c.metrics.mean_energy_mj,
                "early_termination": c.metrics.early_termination,
                "worst_case_latency_s": c.costs.latency_s[-1],
            }
            for r, c in enumerate(ranked)
        ],
        "pruned": pruned,
        "stats": {
            "enumerated": len(archs),
            "pruned": len(pruned),
            "survivors": len(evaluated),
            "threshold_configurations": sum(c.configurations for c in evaluated),
            "backbone_only_survives": backbone_survives,
        },
    }
    return report


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def replay_plan(report: Mapping, model_doc: Mapping, hardware_doc: Mapping, records, weights: Weights | None = None) -> dict:
    """Re-run a saved plan's chosen configuration on (possibly new) records."""
    g = parse_model_graph(model_doc)
    bg = fuse_blocks(g)
    bp = extract_classifier_blueprint(g)
    plat = parse_platform(hardware_doc)
    groups = records if isinstance(records, Mapping) else load_records(records)
    chosen = report["chosen"]
    locations = enumerate_exit_locations(bg)
    arch = Architecture(tuple(chosen["exit_locations"]))
    mapping = map_to_processors(arch, plat, bg, build_exit_candidates(bg, bp, value_bytes=g.value_bytes), locations)
    costs = cascade_costs(mapping, plat)
    config = ThresholdConfig(tuple(chosen["thresholds"][:-1]))
    if weights is None:
        w = report.get("options", {}).get("weights", {})
        weights = Weights(w.get("efficiency", 0.9), w.get("accuracy", 0.1))
    b = report["baseline"]
    base = BaseMetrics(b["accuracy"], b["macs"], b["latency_s"], b["energy_mj"])
    locs = list(chosen["exits"]) + [FINAL_LOCATION]
    sim = simulate_cascade(locs, config, groups, costs, base, weights)
    p = chosen["predicted"]
    pred = PredictedMetrics(
        p["accuracy"], p["mean_macs"], p["mean_latency_s"], p["mean_energy_mj"],
        tuple(p["termination_rates"]), p["scalar_cost"],
    )
    return {
        "architecture": chosen["architecture"],
        "thresholds": chosen["thresholds"],
        "simulated": sim.to_dict(),
        "divergence": compare(pred, sim),
        "deltas": _deltas(sim, base),
    }
