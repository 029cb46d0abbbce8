import pytest
from hypothesis import given
from hypothesis import strategies as st

from exitplan.exits import (
    BudgetError,
    ExitCandidate,
    BranchLayer,
    build_exit_branch,
    build_exit_candidates,
    check_budget,
    enumerate_exit_locations,
)
from exitplan.graph_ir import Blueprint, BlueprintLayer, extract_classifier_blueprint, fuse_blocks, parse_model_graph

from conftest import chain_doc

BP = Blueprint(
    (BlueprintLayer("global-pool"), BlueprintLayer("dense", 10), BlueprintLayer("softmax")),
    num_classes=10,
    input_shape=(4, 4, 512),
)


def fake(macs):
    return ExitCandidate("b", (BranchLayer("dense", (10,), macs, 0, 40),), (1,), 0)


def _chain(n_convs):
    specs = [(f"c{i}", "conv", (4, 4, 2), {"kernel": [1, 1]}) for i in range(n_convs)]
    doc = chain_doc(*specs, ("fc", "dense", (3,)))
    return fuse_blocks(parse_model_graph(doc))


def test_location_counts(resnet_doc):
    assert len(enumerate_exit_locations(_chain(2))) == 2
    assert enumerate_exit_locations(fuse_blocks(parse_model_graph(chain_doc(("fc", "dense", (3,)))))) == []
    assert len(enumerate_exit_locations(fuse_blocks(parse_model_graph(resnet_doc)))) == 74


def test_no_downsampling_when_small():
    c = build_exit_branch(BP, (4, 4, 64), target_area=16)
    assert c.downsampling_steps == 0
    assert [l.kind for l in c.branch_layers] == ["global-pool", "dense", "softmax"]
    assert c.branch_macs == 64 * 10


def test_three_pools_from_32():
    c = build_exit_branch(BP, (32, 32, 16), target_area=16)
    assert c.downsampling_steps == 3
    assert [l.output_shape for l in c.branch_layers[:3]] == [(16, 16, 16), (8, 8, 16), (4, 4, 16)]


def test_vector_input_needs_no_pooling():
    c = build_exit_branch(BP, (1, 1, 128))
    assert c.downsampling_steps == 0
    assert c.num_classes == 10


def test_budget_examples():
    assert check_budget([fake(1000), fake(1000)], 1_000_000)
    assert not check_budget([fake(5000)], 1_000_000)
    assert check_budget([], 1_000_000)


def test_branch_over_budget_raises():
    with pytest.raises(BudgetError):
        build_exit_branch(BP, (1, 1, 128), backbone_macs=1000)


def test_resnet_candidates(resnet_doc):
    g = parse_model_graph(resnet_doc)
    bg = fuse_blocks(g)
    bp = extract_classifier_blueprint(g)
    cands = build_exit_candidates(bg, bp)
    assert len(cands) == 74
    cum = [c.cum_backbone_macs for c in cands.values()]
    assert all(a < b for a, b in zip(cum, cum[1:]))
    steps = [c.downsampling_steps for c in cands.values()]
    assert all(a >= b for a, b in zip(steps, steps[1:]))
    for c in cands.values():
        assert c.num_classes == 10
        assert c.branch_macs > 0
        assert c.branch_layers[-1].kind == "softmax"


@given(st.lists(st.integers(0, 10_000), max_size=6), st.integers(1, 10**7), st.data())
def test_budget_monotone_under_removal(macs, backbone, data):
    exits = [fake(m) for m in macs]
    if check_budget(exits, backbone) and exits:
        drop = data.draw(st.integers(0, len(exits) - 1))
        assert check_budget(exits[:drop] + exits[drop + 1:], backbone)


@given(st.integers(1, 512), st.integers(1, 512), st.integers(1, 64), st.integers(1, 64))
def test_pooling_reaches_target(h, w, c, target):
    cand = build_exit_branch(BP, (h, w, c), target_area=target)
    pooled = cand.branch_layers[cand.downsampling_steps - 1].output_shape if cand.downsampling_steps else (h, w, c)
    assert pooled[0] * pooled[1] <= target or pooled[:2] == (1, 1)
    assert cand.num_classes == 10
