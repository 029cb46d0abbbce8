"""Architecture enumeration, processor mapping and constraint pruning."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Mapping as TMapping, Sequence

from .exits import ExitCandidate
from .graph_ir import BlockGraph
from .hw_model import Platform, memory_fit, worst_case_latency


@dataclass(frozen=True, order=True)
class Architecture:
    """Exit positions as indices into the candidate location list."""

    exit_locations: tuple[int, ...]

    def __post_init__(self):
        locs = self.exit_locations
        if any(b <= a for a, b in zip(locs, locs[1:])):
            raise ValueError("exit locations must be strictly increasing")

    @property
    def classifier_count(self) -> int:
        return len(self.exit_locations) + 1

    @property
    def n_exits(self) -> int:
        return len(self.exit_locations)

    @property
    def id(self) -> str:
        if not self.exit_locations:
            return "backbone"
        return "exits@" + ",".join(str(i) for i in self.exit_locations)

    def sort_key(self):
        return (len(self.exit_locations), self.exit_locations)


@dataclass(frozen=True)
class Segment:
    start: int  # first block index
    stop: int  # one past the last block index
    processor_id: str
    exit_id: str | None  # location block id of the exit closing this segment; None for the final one
    backbone_macs: int
    branch_macs: int
    params_bytes: int
    peak_activation_bytes: int
    out_bytes: int

    @property
    def macs(self) -> int:
        return self.backbone_macs + self.branch_macs


@dataclass(frozen=True)
class Mapping:
    segments: tuple[Segment, ...]

    @property
    def assignments(self) -> list[tuple[tuple[int, int], str]]:
        return [((s.start, s.stop), s.processor_id) for s in self.segments]

    @property
    def processors_used(self) -> list[str]:
        return [s.processor_id for s in self.segments]


def count_architectures(n_locations: int, n_processors: int) -> int:
    return sum(comb(n_locations, k) for k in range(0, n_processors))


def enumerate_architectures(locations: Sequence, platform: Platform | int) -> list[Architecture]:
    """Backbone-only plus every exit subset that fits the processor count.

    Ordered by exit count, then lexicographically.
    """
    n_proc = platform if isinstance(platform, int) else len(platform.processors)
    if n_proc < 1:
        raise ValueError("need at least one processor")
    idx = range(len(locations))
    out = []
    for k in range(0, min(n_proc - 1, len(locations)) + 1):
        out.extend(Architecture(c) for c in itertools.combinations(idx, k))
    return out


def map_to_processors(
    arch: Architecture,
    plat: Platform,
    bg: BlockGraph,
    exits: TMapping[str, ExitCandidate] | None = None,
    locations: Sequence[str] | None = None,
) -> Mapping:
    """Assign subgraph k (ending at exit k, or at the output) to processor k.

    ``locations`` maps location indices to block ids (default: every block but
    the last, in order). Trailing processors stay idle.
    """
    if arch.classifier_count > len(plat.processors):
        raise ValueError(
            f"{arch.id} needs {arch.classifier_count} processors, platform has {len(plat.processors)}"
        )
    if locations is None:
        locations = [b.id for b in bg.blocks[:-1]]
    exits = exits or {}
    bounds = [bg.index(locations[i]) + 1 for i in arch.exit_locations] + [len(bg.blocks)]
    segs = []
    start = 0
    for k, stop in enumerate(bounds):
        blocks = bg.blocks[start:stop]
        exit_id = locations[arch.exit_locations[k]] if k < arch.n_exits else None
        branch = exits.get(exit_id) if exit_id is not None else None
        peak = max(b.activation_bytes for b in blocks)
        params = sum(b.params_bytes for b in blocks)
        if branch is not None:
            peak = max(peak, branch.peak_activation_bytes)
            params += branch.params_bytes
        segs.append(
            Segment(
                start=start,
                stop=stop,
                processor_id=plat.processors[k].id,
                exit_id=exit_id,
                backbone_macs=sum(b.macs for b in blocks),
                branch_macs=branch.branch_macs if branch is not None else 0,
                params_bytes=params,
                peak_activation_bytes=peak,
                out_bytes=blocks[-1].out_bytes,
            )
        )
        start = stop
    return Mapping(tuple(segs))


@dataclass
class PruneResult:
    kept: list[Architecture]
    rejected: list[tuple[Architecture, str]]

    def __iter__(self):
        return iter(self.kept)

    def __len__(self):
        return len(self.kept)


def check_constraints(mapping: Mapping, plat: Platform) -> str | None:
    """Rejection reason for a mapped architecture, or None if it fits."""
    wcl = worst_case_latency(mapping, plat)
    if wcl > plat.latency_budget_s:
        return f"latency: worst case {wcl:.6g} s exceeds budget {plat.latency_budget_s:.6g} s"
    for i, seg in enumerate(mapping.segments):
        p = plat.processor(seg.processor_id)
        if not memory_fit(seg.params_bytes, seg.peak_activation_bytes, p):
            return f"memory: segment {i} does not fit on {p.id}"
    return None


def prune(archs: Sequence[Architecture], plat: Platform, mappings) -> PruneResult:
    """Keep architectures that meet the latency budget and memory limits.

    ``mappings`` is either a dict from architecture to :class:`Mapping` or a
    callable producing one.
    """
    get = mappings if callable(mappings) else mappings.__getitem__
    kept, rejected = [], []
    for a in archs:
        reason = check_constraints(get(a), plat)
        if reason is None:
            kept.append(a)
        else:
            rejected.append((a, reason))
    return PruneResult(kept, rejected)
