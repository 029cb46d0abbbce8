"""Processor-chain description and the simple cost estimators used by the search.

Latency is MACs over throughput, transfers are bytes over link bandwidth, and
energy follows a single-active-processor model: while one processor computes,
every other processor draws its sleep power.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence


class HardwareError(ValueError):
    pass


@dataclass(frozen=True)
class ProcessorSpec:
    id: str
    macs_per_second: float
    mem_bytes: int
    storage_bytes: int
    active_power_mw: float = 0.0
    sleep_power_mw: float = 0.0

    def __post_init__(self):
        if not self.macs_per_second > 0:
            raise HardwareError(f"processor {self.id!r}: macs_per_second must be positive")
        if self.mem_bytes <= 0 or self.storage_bytes <= 0:
            raise HardwareError(f"processor {self.id!r}: memory and storage must be positive")
        if self.active_power_mw < 0 or self.sleep_power_mw < 0:
            raise HardwareError(f"processor {self.id!r}: power must be non-negative")
        if self.sleep_power_mw > self.active_power_mw:
            raise HardwareError(f"processor {self.id!r}: sleep power exceeds active power")


@dataclass(frozen=True)
class Link:
    source: str
    target: str
    bytes_per_second: float

    def __post_init__(self):
        if not self.bytes_per_second > 0:
            raise HardwareError(f"link {self.source}->{self.target}: bandwidth must be positive")


@dataclass(frozen=True)
class Platform:
    processors: tuple[ProcessorSpec, ...]
    links: tuple[Link, ...]
    latency_budget_s: float

    def __post_init__(self):
        if not self.processors:
            raise HardwareError("platform needs at least one processor")
        ids = [p.id for p in self.processors]
        if len(set(ids)) != len(ids):
            raise HardwareError("duplicate processor ids")
        if len(self.links) != len(self.processors) - 1:
            raise HardwareError("expected one link between each pair of consecutive processors")
        for i, link in enumerate(self.links):
            if (link.source, link.target) != (ids[i], ids[i + 1]):
                raise HardwareError(
                    f"link {i} must connect {ids[i]!r} to {ids[i + 1]!r} (processor order)"
                )
        if not self.latency_budget_s > 0:
            raise HardwareError("latency_budget_s must be positive")

    def processor(self, proc_id: str) -> ProcessorSpec:
        for p in self.processors:
            if p.id == proc_id:
                return p
        raise HardwareError(f"unknown processor {proc_id!r}")

    def link_between(self, source: str, target: str) -> Link:
        for link in self.links:
            if link.source == source and link.target == target:
                return link
        raise HardwareError(f"no link from {source!r} to {target!r}")

    def to_doc(self) -> dict:
        return {
            "processors": [
                {
                    "id": p.id,
                    "macs_per_second": p.macs_per_second,
                    "mem_bytes": p.mem_bytes,
                    "storage_bytes": p.storage_bytes,
                    "active_power_mw": p.active_power_mw,
                    "sleep_power_mw": p.sleep_power_mw,
                }
                for p in self.processors
            ],
            "links": [
                {"from": l.source, "to": l.target, "bytes_per_second": l.bytes_per_second}
                for l in self.links
            ],
            "latency_budget_s": self.latency_budget_s,
        }


_PROC_FIELDS = {"id", "macs_per_second", "mem_bytes", "storage_bytes", "active_power_mw", "sleep_power_mw"}


def parse_platform(doc: Mapping) -> Platform:
    try:
        unknown = set(doc) - {"processors", "links", "latency_budget_s"}
        if unknown:
            raise HardwareError(f"unknown hardware fields: {sorted(unknown)}")
        procs = []
        for raw in doc["processors"]:
            extra = set(raw) - _PROC_FIELDS
            if extra:
                raise HardwareError(f"unknown processor fields: {sorted(extra)}")
            procs.append(
                ProcessorSpec(
                    id=str(raw["id"]),
                    macs_per_second=float(raw["macs_per_second"]),
                    mem_bytes=int(raw["mem_bytes"]),
                    storage_bytes=int(raw["storage_bytes"]),
                    active_power_mw=float(raw.get("active_power_mw", 0.0)),
                    sleep_power_mw=float(raw.get("sleep_power_mw", 0.0)),
                )
            )
        links = [
            Link(str(raw["from"]), str(raw["to"]), float(raw["bytes_per_second"]))
            for raw in doc.get("links", [])
        ]
        return Platform(tuple(procs), tuple(links), float(doc["latency_budget_s"]))
    except (KeyError, TypeError) as exc:
        raise HardwareError(f"malformed hardware description: {exc!r}") from exc


def load_platform(path: str | Path) -> Platform:
    with open(path, encoding="utf-8") as fh:
        return parse_platform(json.load(fh))


# ---------------------------------------------------------------------------
# estimators


def segment_latency(macs: int, p: ProcessorSpec) -> float:
    return macs / p.macs_per_second


def transfer_latency(nbytes: int, link: Link) -> float:
    return nbytes / link.bytes_per_second


def segment_latencies(mapping, plat: Platform) -> list[float]:
    """Compute time of each mapped segment, exit branch included."""
    return [
        segment_latency(seg.backbone_macs + seg.branch_macs, plat.processor(seg.processor_id))
        for seg in mapping.segments
    ]


def transfer_latencies(mapping, plat: Platform) -> list[float]:
    """Time to ship each segment's output to the next segment's processor."""
    segs = mapping.segments
    out = []
    for a, b in zip(segs, segs[1:]):
        out.append(transfer_latency(a.out_bytes, plat.link_between(a.processor_id, b.processor_id)))
    return out


def worst_case_latency(mapping, plat: Platform) -> float:
    """Full-depth execution time: every segment runs and every transfer happens."""
    return math.fsum(segment_latencies(mapping, plat)) + math.fsum(transfer_latencies(mapping, plat))


def energy_estimate(
    mapping, latencies: Sequence[float], plat: Platform, executed_up_to: int
) -> float:
    """Energy in mJ for running the first ``executed_up_to`` segments.

    The executing processor draws active power; all others sleep for the same
    wall-clock span.
    """
    segs = mapping.segments
    if executed_up_to > len(segs):
        raise ValueError("executed_up_to exceeds the number of segments")
    total_sleep = math.fsum(p.sleep_power_mw for p in plat.processors)
    terms = []
    for seg, lat in zip(segs[:executed_up_to], latencies[:executed_up_to]):
        p = plat.processor(seg.processor_id)
        terms.append(lat * p.active_power_mw)
        terms.append(lat * (total_sleep - p.sleep_power_mw))
    return math.fsum(terms)


def memory_fit(params_bytes: int, peak_activation_bytes: int, p: ProcessorSpec) -> bool:
    return params_bytes <= p.storage_bytes and peak_activation_bytes + params_bytes <= p.mem_bytes
