"""Early-exit branch synthesis from the backbone's classifier blueprint."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .graph_ir import DEFAULT_VALUE_BYTES, Blueprint, BlockGraph, spatial_area

DEFAULT_MAX_FRACTION = 0.005


@dataclass(frozen=True)
class BranchLayer:
    kind: str
    output_shape: tuple[int, ...]
    macs: int
    params_bytes: int
    activation_bytes: int


@dataclass(frozen=True)
class ExitCandidate:
    location_block_id: str
    branch_layers: tuple[BranchLayer, ...]
    ifm_shape: tuple[int, ...]
    cum_backbone_macs: int

    @property
    def branch_macs(self) -> int:
        return sum(l.macs for l in self.branch_layers)

    @property
    def params_bytes(self) -> int:
        return sum(l.params_bytes for l in self.branch_layers)

    @property
    def peak_activation_bytes(self) -> int:
        return max(l.activation_bytes for l in self.branch_layers)

    @property
    def num_classes(self) -> int:
        return self.branch_layers[-1].output_shape[-1]

    @property
    def downsampling_steps(self) -> int:
        n = 0
        for layer in self.branch_layers:
            if layer.kind != "avg-pool-2x2":
                break
            n += 1
        return n

    def describe(self) -> list[str]:
        return [f"{l.kind}{list(l.output_shape)}" for l in self.branch_layers]


class BudgetError(ValueError):
    pass


def enumerate_exit_locations(bg: BlockGraph) -> list[str]:
    """Block ids after which an exit may attach; the last (classifier) block is excluded."""
    return [b.id for b in bg.blocks[:-1]]


def _halve(shape: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(math.ceil(d / 2) for d in shape[:-1]) + (shape[-1],)


def build_exit_branch(
    bp: Blueprint,
    ifm_shape: Sequence[int],
    location_block_id: str = "",
    cum_backbone_macs: int = 0,
    target_area: int | None = None,
    value_bytes: int = DEFAULT_VALUE_BYTES,
    backbone_macs: int | None = None,
    max_fraction: float = DEFAULT_MAX_FRACTION,
) -> ExitCandidate:
    """Downsample the attachment tensor, then instantiate the blueprint on it.

    Stride-2 average pools are prepended while the spatial area exceeds
    ``target_area`` (default: the area the blueprint sees in the backbone).
    With ``backbone_macs`` given, a branch that alone breaks the MAC budget
    raises :class:`BudgetError`.
    """
    if target_area is None:
        target_area = bp.input_area
    target_area = max(1, target_area)
    shape = tuple(ifm_shape)
    layers: list[BranchLayer] = []

    def add(kind, out_shape, macs=0, params=0):
        layers.append(
            BranchLayer(kind, out_shape, macs, params * value_bytes, math.prod(out_shape) * value_bytes)
        )

    while spatial_area(shape) > target_area and any(d > 1 for d in shape[:-1]):
        shape = _halve(shape)
        add("avg-pool-2x2", shape)

    for i, layer in enumerate(bp.layers):
        is_last_classifier = layer.kind in ("dense", "conv") and not any(
            l.kind in ("dense", "conv") for l in bp.layers[i + 1 :]
        )
        units = bp.num_classes if is_last_classifier else layer.units
        if layer.kind == "global-pool":
            if len(shape) > 1:
                shape = (shape[-1],)
                add("global-pool", shape)
        elif layer.kind == "pool":
            if any(d > 1 for d in shape[:-1]):
                shape = _halve(shape)
                add("avg-pool-2x2", shape)
        elif layer.kind == "reshape":
            shape = (math.prod(shape),)
            add("reshape", shape)
        elif layer.kind == "dense":
            n_in = math.prod(shape)
            shape = (units,)
            add("dense", shape, n_in * units, n_in * units + units)
        elif layer.kind == "conv":
            n_in = shape[-1]
            shape = shape[:-1] + (units,)
            add("conv", shape, spatial_area(shape) * n_in * units, n_in * units + units)
        else:
            add(layer.kind, shape)
    cand = ExitCandidate(location_block_id, tuple(layers), tuple(ifm_shape), cum_backbone_macs)
    if backbone_macs is not None and not check_budget([cand], backbone_macs, max_fraction):
        raise BudgetError(
            f"exit at {location_block_id or 'location'} needs {cand.branch_macs} MACs, "
            f"over {max_fraction:.3%} of the backbone"
        )
    return cand


def build_exit_candidates(bg: BlockGraph, bp: Blueprint, **kwargs) -> dict[str, ExitCandidate]:
    out = {}
    cum = 0
    for block in bg.blocks[:-1]:
        cum += block.macs
        out[block.id] = build_exit_branch(bp, block.ofm_shape, block.id, cum, **kwargs)
    return out


def check_budget(
    exits: Sequence[ExitCandidate], backbone_macs: int, max_fraction: float = DEFAULT_MAX_FRACTION
) -> bool:
    if backbone_macs <= 0:
        raise ValueError("backbone_macs must be positive")
    return sum(e.branch_macs for e in exits) < max_fraction * backbone_macs
