import numpy as np
import pytest

from exitplan import fixtures
from exitplan.profiles import ExitProfile
from exitplan.synth import generate_synthetic_profiles


def layer(id, kind, shape, inputs, **kw):
    d = {"id": id, "kind": kind, "shape": list(shape), "inputs": list(inputs)}
    d.update(kw)
    return d


def chain_doc(*specs, name="m"):
    """Build a chain model from (id, kind, shape, extra) tuples; input and output are added."""
    first_shape = specs[0][2] if specs else (4,)
    layers = [layer("in", "input", first_shape, [])]
    prev = "in"
    for spec in specs:
        nid, kind, shape = spec[:3]
        extra = spec[3] if len(spec) > 3 else {}
        layers.append(layer(nid, kind, shape, [prev], **extra))
        prev = nid
    layers.append(layer("out", "output", layers[-1]["shape"], [prev]))
    return {"name": name, "layers": layers}


def random_profile(rng, n=None, loc="x"):
    n = n or int(rng.integers(5, 60))
    conf = np.round(rng.random(n), 2)
    correct = rng.random(n) < rng.uniform(0.2, 1.0)
    return ExitProfile.from_pairs(loc, conf, correct)


@pytest.fixture(scope="session")
def speech_docs():
    return fixtures.load_bundled("speech"), fixtures.load_bundled("speech_hw")


@pytest.fixture(scope="session")
def speech_records():
    return generate_synthetic_profiles(fixtures.load_bundled("speech_synth"), seed=0)


@pytest.fixture(scope="session")
def resnet_doc():
    return fixtures.load_bundled("resnet74")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
