"""Layer- and block-level graph representations of a trained model.

A model document is parsed into a :class:`LayerGraph` (one node per layer,
annotated with MAC, parameter and activation costs) and then coarsened into a
:class:`BlockGraph`, whose boundaries are the places an early exit may be
attached.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

LAYER_KINDS = frozenset(
    {
        "conv",
        "depthwise-conv",
        "dense",
        "pool",
        "add",
        "activation",
        "batchnorm",
        "reshape",
        "softmax",
        "input",
        "output",
    }
)
COMPUTE_KINDS = frozenset({"conv", "depthwise-conv", "dense"})
# post-processing layers that fuse into the preceding block
FUSABLE_KINDS = frozenset({"activation", "batchnorm", "pool", "reshape", "softmax"})

LAYER_FIELDS = frozenset(
    {"id", "kind", "shape", "macs", "params_bytes", "activation_bytes", "inputs", "kernel"}
)
DOC_FIELDS = frozenset({"name", "layers", "value_bytes"})

# float32 unless the document carries explicit byte counts
DEFAULT_VALUE_BYTES = 4


class ModelGraphError(ValueError):
    """Raised for model documents that cannot be turned into a valid graph."""


@dataclass(frozen=True)
class LayerNode:
    id: str
    kind: str
    output_shape: tuple[int, ...]
    macs: int
    params_bytes: int
    activation_bytes: int
    predecessors: tuple[str, ...]
    kernel: tuple[int, ...] | None = None

    @property
    def spatial_area(self) -> int:
        return spatial_area(self.output_shape)


def spatial_area(shape: Sequence[int]) -> int:
    """Product of all but the channel dimension (1 for vectors)."""
    return math.prod(shape[:-1]) if len(shape) > 1 else 1


@dataclass(frozen=True)
class LayerGraph:
    name: str
    nodes: tuple[LayerNode, ...]  # topological order
    value_bytes: int = DEFAULT_VALUE_BYTES

    def __post_init__(self):
        object.__setattr__(self, "_index", {n.id: n for n in self.nodes})
        succ: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for p in n.predecessors:
                succ[p].append(n.id)
        object.__setattr__(self, "_succ", {k: tuple(v) for k, v in succ.items()})

    def __getitem__(self, node_id: str) -> LayerNode:
        return self._index[node_id]

    def __len__(self) -> int:
        return len(self.nodes)

    def successors(self, node_id: str) -> tuple[str, ...]:
        return self._succ[node_id]

    @property
    def input_node(self) -> LayerNode:
        return self.nodes[0]

    @property
    def output_node(self) -> LayerNode:
        return self.nodes[-1]

    @property
    def total_macs(self) -> int:
        return sum(n.macs for n in self.nodes)

    def to_doc(self) -> dict:
        layers = []
        for n in self.nodes:
            entry = {
                "id": n.id,
                "kind": n.kind,
                "shape": list(n.output_shape),
                "macs": n.macs,
                "params_bytes": n.params_bytes,
                "activation_bytes": n.activation_bytes,
                "inputs": list(n.predecessors),
            }
            if n.kernel is not None:
                entry["kernel"] = list(n.kernel)
            layers.append(entry)
        return {"name": self.name, "value_bytes": self.value_bytes, "layers": layers}


@dataclass(frozen=True)
class Block:
    id: str
    member_layers: tuple[str, ...]
    kind: str  # plain | residual | fused-compute
    macs: int
    ofm_shape: tuple[int, ...]
    params_bytes: int
    activation_bytes: int  # peak over members
    out_bytes: int  # size of the tensor leaving the block


@dataclass(frozen=True)
class BlockGraph:
    """Chain of blocks; a boundary sits between every consecutive pair."""

    layers: LayerGraph
    blocks: tuple[Block, ...]

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def total_macs(self) -> int:
        return sum(b.macs for b in self.blocks)

    def index(self, block_id: str) -> int:
        for i, b in enumerate(self.blocks):
            if b.id == block_id:
                return i
        raise KeyError(block_id)


@dataclass(frozen=True)
class BlueprintLayer:
    kind: str  # global-pool | pool | reshape | dense | conv | activation | softmax
    units: int | None = None


@dataclass(frozen=True)
class Blueprint:
    layers: tuple[BlueprintLayer, ...]
    num_classes: int
    input_shape: tuple[int, ...]
    source_layers: tuple[str, ...] = field(default=(), compare=False)

    @property
    def input_area(self) -> int:
        return spatial_area(self.input_shape)

    def describe(self) -> list[str]:
        out = []
        for i, layer in enumerate(self.layers):
            if layer.units is None:
                out.append(layer.kind)
            elif i == self._classifier_index():
                out.append(f"{layer.kind}(num_classes)")
            else:
                out.append(f"{layer.kind}({layer.units})")
        return out

    def _classifier_index(self) -> int:
        for i in range(len(self.layers) - 1, -1, -1):
            if self.layers[i].kind in ("dense", "conv"):
                return i
        return -1


# ---------------------------------------------------------------------------
# parsing


def load_model_graph(path: str | Path) -> LayerGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_model_graph(json.load(fh))


def _int_field(raw: Mapping, key: str, node_id: str) -> int | None:
    if key not in raw or raw[key] is None:
        return None
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise ModelGraphError(f"layer {node_id!r}: {key} must be an integer")
    if value < 0:
        raise ModelGraphError(f"negative cost field {key!r} on layer {node_id!r}")
    return int(value)


def _conv_macs(kind, shape, in_shape, kernel, node_id) -> int:
    if kernel is None:
        raise ModelGraphError(f"layer {node_id!r}: {kind} needs 'kernel' or 'macs'")
    if len(kernel) != len(shape) - 1:
        raise ModelGraphError(f"layer {node_id!r}: kernel rank does not match spatial rank")
    k = math.prod(kernel)
    macs = math.prod(shape) * k
    if kind == "conv":
        macs *= in_shape[-1]
    return macs


def _default_params(kind, shape, in_shape, kernel) -> int:
    if kind == "conv":
        return math.prod(kernel or (1,)) * in_shape[-1] * shape[-1] + shape[-1]
    if kind == "depthwise-conv":
        return math.prod(kernel or (1,)) * shape[-1] + shape[-1]
    if kind == "dense":
        return math.prod(in_shape) * shape[-1] + shape[-1]
    if kind == "batchnorm":
        return 2 * shape[-1]
    return 0


def parse_model_graph(doc: Mapping, value_bytes: int | None = None) -> LayerGraph:
    """Validate a model document and build its layer graph.

    MAC counts of conv/dense layers are recomputed from the shapes when the
    document omits them. Parameter and activation sizes default to
    ``value_bytes`` per value (argument, else the document's ``value_bytes``,
    else 4).
    """
    if not isinstance(doc, Mapping):
        raise ModelGraphError("model document must be a JSON object")
    unknown = set(doc) - DOC_FIELDS
    if unknown:
        raise ModelGraphError(f"unknown document fields: {sorted(unknown)}")
    if value_bytes is None:
        value_bytes = doc.get("value_bytes", DEFAULT_VALUE_BYTES)
    if isinstance(value_bytes, bool) or not isinstance(value_bytes, int) or value_bytes < 1:
        raise ModelGraphError("value_bytes must be a positive integer")
    layers = doc.get("layers")
    if not isinstance(layers, list) or not layers:
        raise ModelGraphError("document needs a non-empty 'layers' list")

    raw_by_id: dict[str, Mapping] = {}
    order: list[str] = []
    for raw in layers:
        if not isinstance(raw, Mapping):
            raise ModelGraphError("every layer must be an object")
        unknown = set(raw) - LAYER_FIELDS
        if unknown:
            raise ModelGraphError(f"layer {raw.get('id')!r}: unknown fields {sorted(unknown)}")
        for key in ("id", "kind", "shape"):
            if key not in raw:
                raise ModelGraphError(f"layer missing required field {key!r}")
        node_id = str(raw["id"])
        if node_id in raw_by_id:
            raise ModelGraphError(f"duplicate layer id {node_id!r}")
        if raw["kind"] not in LAYER_KINDS:
            raise ModelGraphError(f"layer {node_id!r}: unknown kind {raw['kind']!r}")
        shape = raw["shape"]
        if not isinstance(shape, list) or not shape or any(
            isinstance(d, bool) or not isinstance(d, int) or d < 1 for d in shape
        ):
            raise ModelGraphError(f"layer {node_id!r}: shape must be a list of positive integers")
        raw_by_id[node_id] = raw
        order.append(node_id)

    preds: dict[str, tuple[str, ...]] = {}
    for node_id in order:
        inputs = raw_by_id[node_id].get("inputs", [])
        if not isinstance(inputs, list):
            raise ModelGraphError(f"layer {node_id!r}: inputs must be a list")
        for p in inputs:
            if p not in raw_by_id:
                raise ModelGraphError(f"dangling predecessor {p!r} referenced by {node_id!r}")
        preds[node_id] = tuple(inputs)

    inputs = [i for i in order if raw_by_id[i]["kind"] == "input"]
    outputs = [i for i in order if raw_by_id[i]["kind"] == "output"]
    if not outputs:
        # without an explicit output node the unique sink plays that role
        consumed = {p for ps in preds.values() for p in ps}
        outputs = [i for i in order if i not in consumed]
    if len(inputs) != 1:
        raise ModelGraphError(f"multiple inputs: expected exactly one input node, found {len(inputs)}")
    if len(outputs) != 1:
        raise ModelGraphError(f"multiple outputs: expected exactly one output node, found {len(outputs)}")

    topo = _topological_order(order, preds)
    _check_structure(topo, preds, raw_by_id)

    nodes: dict[str, LayerNode] = {}
    for node_id in topo:
        raw = raw_by_id[node_id]
        kind = raw["kind"]
        shape = tuple(raw["shape"])
        in_shape = nodes[preds[node_id][0]].output_shape if preds[node_id] else shape
        kernel = tuple(raw["kernel"]) if raw.get("kernel") is not None else None
        macs = _int_field(raw, "macs", node_id)
        if kind in COMPUTE_KINDS:
            if macs is None:
                if kind == "dense":
                    macs = math.prod(in_shape) * shape[-1]
                else:
                    macs = _conv_macs(kind, shape, in_shape, kernel, node_id)
        else:
            if macs:
                raise ModelGraphError(f"layer {node_id!r}: {kind} layers carry no MACs")
            macs = 0
        params = _int_field(raw, "params_bytes", node_id)
        if params is None:
            params = _default_params(kind, shape, in_shape, kernel) * value_bytes
        act = _int_field(raw, "activation_bytes", node_id)
        if act is None:
            act = math.prod(shape) * value_bytes
        nodes[node_id] = LayerNode(node_id, kind, shape, macs, params, act, preds[node_id], kernel)

    return LayerGraph(str(doc.get("name", "model")), tuple(nodes[i] for i in topo), value_bytes)


def _topological_order(order: list[str], preds: dict[str, tuple[str, ...]]) -> list[str]:
    # Kahn's algorithm, ties broken by document order
    position = {n: i for i, n in enumerate(order)}
    indeg = {n: len(preds[n]) for n in order}
    succ: dict[str, list[str]] = {n: [] for n in order}
    for n in order:
        for p in preds[n]:
            succ[p].append(n)
    ready = [(position[n], n) for n in order if indeg[n] == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        _, n = heapq.heappop(ready)
        out.append(n)
        for s in succ[n]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(ready, (position[s], s))
    if len(out) != len(order):
        raise ModelGraphError("cycle detected in model graph")
    return out


def _check_structure(topo, preds, raw_by_id) -> None:
    succ: dict[str, list[str]] = {n: [] for n in topo}
    for n in topo:
        for p in preds[n]:
            succ[p].append(n)
    first, last = topo[0], topo[-1]
    if raw_by_id[first]["kind"] != "input":
        raise ModelGraphError("model graph is not connected: more than one source node")
    if succ[last]:
        raise ModelGraphError("model graph is not connected: more than one sink node")
    for n in topo:
        kind = raw_by_id[n]["kind"]
        n_in = len(preds[n])
        if kind == "input":
            if n_in:
                raise ModelGraphError("input node cannot have predecessors")
        elif n_in == 0:
            raise ModelGraphError(f"model graph is not connected: {n!r} has no inputs")
        elif kind == "add":
            if n_in != 2:
                raise ModelGraphError(f"add node {n!r} must join exactly two branches")
        elif n_in != 1:
            raise ModelGraphError(f"layer {n!r} ({kind}) takes exactly one input")
        if kind == "output":
            if succ[n]:
                raise ModelGraphError("output node cannot have successors")
        elif not succ[n] and n != last:
            raise ModelGraphError(f"model graph is not connected: {n!r} is a dead end")
        if len(succ[n]) > 2:
            raise ModelGraphError(f"unsupported branching at {n!r}: only residual fork-join is allowed")

    # more than two live tensors means a nested or multi-way branch
    remaining = {n: len(succ[n]) for n in topo}
    live: set[str] = set()
    for n in topo:
        for p in preds[n]:
            remaining[p] -= 1
            if remaining[p] == 0:
                live.discard(p)
        if remaining[n]:
            live.add(n)
        if len(live) > 2:
            raise ModelGraphError(f"unsupported branching near {n!r}: only residual fork-join is allowed")


# ---------------------------------------------------------------------------
# fusion


def _clean_cuts(g: LayerGraph) -> list[bool]:
    """clean[i] is True if only node i's output crosses the cut after position i."""
    pos = {n.id: i for i, n in enumerate(g.nodes)}
    last_use = [i for i in range(len(g.nodes))]
    for i, n in enumerate(g.nodes):
        for p in n.predecessors:
            last_use[pos[p]] = max(last_use[pos[p]], i)
    clean = []
    furthest_earlier = -1  # furthest consumer of any node before i
    for i in range(len(g.nodes)):
        clean.append(furthest_earlier <= i)
        furthest_earlier = max(furthest_earlier, last_use[i])
    return clean


def fuse_blocks(g: LayerGraph) -> BlockGraph:
    """Partition the layer graph into a chain of blocks.

    Residual fork-join regions collapse into one block, post-processing layers
    fuse into the block before them, the input joins the first block and the
    output the last.
    """
    clean = _clean_cuts(g)
    nodes = g.nodes
    groups: list[list[LayerNode]] = [[nodes[0]]]
    for i in range(1, len(nodes)):
        prev, cur = nodes[i - 1], nodes[i]
        cut = (
            clean[i - 1]
            and prev.kind != "input"
            and cur.kind not in FUSABLE_KINDS
            and cur.kind != "output"
        )
        if cut:
            groups.append([cur])
        else:
            groups[-1].append(cur)

    blocks = []
    for idx, members in enumerate(groups):
        kinds = {m.kind for m in members}
        if "add" in kinds:
            kind = "residual"
        elif kinds & COMPUTE_KINDS:
            kind = "fused-compute"
        else:
            kind = "plain"
        blocks.append(
            Block(
                id=f"b{idx}",
                member_layers=tuple(m.id for m in members),
                kind=kind,
                macs=sum(m.macs for m in members),
                ofm_shape=members[-1].output_shape,
                params_bytes=sum(m.params_bytes for m in members),
                activation_bytes=max(m.activation_bytes for m in members),
                out_bytes=members[-1].activation_bytes,
            )
        )
    return BlockGraph(g, tuple(blocks))


# ---------------------------------------------------------------------------
# classifier blueprint

_HEAD_PASS_KINDS = frozenset({"softmax", "activation", "reshape"})


def extract_classifier_blueprint(g: LayerGraph) -> Blueprint:
    """Read the classifier head off the end of the backbone.

    Walks backwards from the output along the single-consumer chain, taking
    activations, reshapes and dense layers, and stops after the pool that feeds
    the classifier (or after a 1x1 conv classifier in fully convolutional
    models).
    """
    out = g.output_node
    num_classes = out.output_shape[-1]
    head: list[LayerNode] = []
    found = False
    cur = g[out.predecessors[0]]
    while True:
        if len(cur.predecessors) != 1 or len(g.successors(cur.id)) != 1:
            break
        if cur.kind in _HEAD_PASS_KINDS:
            head.append(cur)
        elif cur.kind == "dense":
            head.append(cur)
            found = True
        elif cur.kind == "pool":
            head.append(cur)
            if found:
                break
        elif cur.kind == "conv" and not found and cur.kernel and all(k == 1 for k in cur.kernel):
            head.append(cur)
            found = True
            break
        else:
            break
        cur = g[cur.predecessors[0]]
    if not found:
        raise ModelGraphError("no recognizable classifier head (no dense/conv-1x1 before output)")

    head.reverse()
    input_shape = g[head[0].predecessors[0]].output_shape
    # leading activations/flattens belong to the feature extractor, not the head
    while head[0].kind in ("activation", "reshape"):
        head.pop(0)
    layers = []
    for n in head:
        if n.kind == "pool":
            kind = "global-pool" if n.spatial_area == 1 else "pool"
            layers.append(BlueprintLayer(kind))
        elif n.kind in ("dense", "conv"):
            layers.append(BlueprintLayer(n.kind, n.output_shape[-1]))
        else:
            layers.append(BlueprintLayer(n.kind))
    return Blueprint(tuple(layers), num_classes, input_shape, tuple(n.id for n in head))
