"""Bundled example models and platforms.

``resnet74`` is a CIFAR-scale residual network with 73 basic units (152
weighted layers) whose block graph has 75 blocks, i.e. 74 exit locations.
``speech`` is a five-location keyword-spotting CNN sized so that on the
two-core ``speech_hw`` platform the backbone alone just meets the 2.5 s budget
while an exit at the last location does not.
"""

from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path

from .profiles import FINAL_LOCATION

BUNDLED = ("resnet74", "speech", "speech_hw", "image_hw", "speech_synth", "resnet74_synth")


def _layer(id, kind, shape, inputs, kernel=None, **extra):
    d = {"id": id, "kind": kind, "shape": list(shape), "inputs": list(inputs)}
    if kernel is not None:
        d["kernel"] = list(kernel)
    d.update(extra)
    return d


def resnet_skeleton(
    units=(8, 16, 40, 9),
    widths=(64, 128, 256, 512),
    stem_width=32,
    image=32,
    num_classes=10,
    name="resnet74",
) -> dict:
    layers = [_layer("input", "input", (image, image, 3), [])]
    layers.append(_layer("stem_conv", "conv", (image, image, stem_width), ["input"], (3, 3)))
    layers.append(_layer("stem_bn", "batchnorm", (image, image, stem_width), ["stem_conv"]))
    layers.append(_layer("stem_relu", "activation", (image, image, stem_width), ["stem_bn"]))
    prev, size, ch = "stem_relu", image, stem_width
    for s, (n_units, width) in enumerate(zip(units, widths), start=1):
        for u in range(1, n_units + 1):
            p = f"s{s}u{u}"
            stride = 2 if (u == 1 and s > 1) else 1
            out = math.ceil(size / stride)
            shape = (out, out, width)
            layers += [
                _layer(f"{p}_conv1", "conv", shape, [prev], (3, 3)),
                _layer(f"{p}_bn1", "batchnorm", shape, [f"{p}_conv1"]),
                _layer(f"{p}_relu1", "activation", shape, [f"{p}_bn1"]),
                _layer(f"{p}_conv2", "conv", shape, [f"{p}_relu1"], (3, 3)),
                _layer(f"{p}_bn2", "batchnorm", shape, [f"{p}_conv2"]),
            ]
            skip = prev
            if stride != 1 or ch != width:
                layers += [
                    _layer(f"{p}_proj", "conv", shape, [prev], (1, 1)),
                    _layer(f"{p}_proj_bn", "batchnorm", shape, [f"{p}_proj"]),
                ]
                skip = f"{p}_proj_bn"
            layers += [
                _layer(f"{p}_add", "add", shape, [f"{p}_bn2", skip]),
                _layer(f"{p}_relu", "activation", shape, [f"{p}_add"]),
            ]
            prev, size, ch = f"{p}_relu", out, width
    layers += [
        _layer("gap", "pool", (1, 1, ch), [prev]),
        _layer("fc", "dense", (num_classes,), ["gap"]),
        _layer("softmax", "softmax", (num_classes,), ["fc"]),
        _layer("output", "output", (num_classes,), ["softmax"]),
    ]
    return {"name": name, "layers": layers}


def speech_model(channels=73, stem_kernel=(20, 5), num_classes=11) -> dict:
    """Keyword-spotting CNN; costs are stated for int8 weights and activations."""
    h, w = 25, 5
    layers = [_layer("input", "input", (49, 10, 1), [])]
    prev, in_ch = "input", 1
    for i in range(1, 6):
        kernel = stem_kernel if i == 1 else (3, 3)
        shape = (h, w, channels)
        macs = h * w * channels * math.prod(kernel) * in_ch
        params = math.prod(kernel) * in_ch * channels + 4 * channels
        act = h * w * channels
        layers += [
            _layer(f"conv{i}", "conv", shape, [prev], kernel, macs=macs, params_bytes=params, activation_bytes=act),
            _layer(f"bn{i}", "batchnorm", shape, [f"conv{i}"], params_bytes=2 * channels, activation_bytes=act),
            _layer(f"relu{i}", "activation", shape, [f"bn{i}"], activation_bytes=act),
        ]
        prev, in_ch = f"relu{i}", channels
    flat = h * w * channels
    layers += [
        _layer("flatten", "reshape", (flat,), [prev], params_bytes=0, activation_bytes=flat),
        _layer("fc", "dense", (num_classes,), ["flatten"], macs=flat * num_classes,
               params_bytes=flat * num_classes + 4 * num_classes, activation_bytes=num_classes),
        _layer("softmax", "softmax", (num_classes,), ["fc"], activation_bytes=num_classes),
        _layer("output", "output", (num_classes,), ["softmax"], activation_bytes=num_classes),
    ]
    return {"name": "speech-cnn", "value_bytes": 1, "layers": layers}


def speech_platform() -> dict:
    return {
        "processors": [
            {"id": "m0", "macs_per_second": 10e6, "mem_bytes": 512 * 1024, "storage_bytes": 1024 * 1024,
             "active_power_mw": 19.14, "sleep_power_mw": 0.5},
            {"id": "m4f", "macs_per_second": 75e6, "mem_bytes": 512 * 1024, "storage_bytes": 1024 * 1024,
             "active_power_mw": 31.96, "sleep_power_mw": 0.8},
        ],
        "links": [{"from": "m0", "to": "m4f", "bytes_per_second": 1e6}],
        "latency_budget_s": 2.5,
    }


def image_platform() -> dict:
    gib = 1024**3
    return {
        "processors": [
            {"id": "cpu", "macs_per_second": 30e9, "mem_bytes": 8 * gib, "storage_bytes": 32 * gib,
             "active_power_mw": 5000.0, "sleep_power_mw": 400.0},
            {"id": "gpu", "macs_per_second": 150e9, "mem_bytes": 8 * gib, "storage_bytes": 32 * gib,
             "active_power_mw": 6000.0, "sleep_power_mw": 300.0},
            {"id": "cloud", "macs_per_second": 5e12, "mem_bytes": 24 * gib, "storage_bytes": 1024 * gib,
             "active_power_mw": 0.0, "sleep_power_mw": 0.0},
        ],
        "links": [
            {"from": "cpu", "to": "gpu", "bytes_per_second": 10e9},
            {"from": "gpu", "to": "cloud", "bytes_per_second": 6.25e6},
        ],
        "latency_budget_s": 1.0,
    }


def speech_generator_spec() -> dict:
    accs = [0.55, 0.75, 0.83, 0.89, 0.93]
    return {
        "mode": "independent",
        "samples": 2000,
        "locations": [
            {"id": f"b{i}", "accuracy": a, "confidence_correct": [6, 2], "confidence_wrong": [2, 3]}
            for i, a in enumerate(accs)
        ],
        "final": {"id": FINAL_LOCATION, "accuracy": 0.9933, "confidence_correct": [9, 1]},
    }


def resnet_generator_spec() -> dict:
    from .synth import depth_generator_spec

    return depth_generator_spec(
        [f"b{i}" for i in range(74)], num_classes=10, final_accuracy=0.94, samples=400, floor_accuracy=0.3
    )


_BUILDERS = {
    "resnet74": resnet_skeleton,
    "speech": speech_model,
    "speech_hw": speech_platform,
    "image_hw": image_platform,
    "speech_synth": speech_generator_spec,
    "resnet74_synth": resnet_generator_spec,
}


def bundled_path(name: str) -> Path:
    if name not in _BUILDERS:
        raise KeyError(f"unknown bundled fixture {name!r}; choose from {BUNDLED}")
    return Path(str(resources.files("exitplan") / "data" / f"{name}.json"))


def load_bundled(name: str) -> dict:
    with open(bundled_path(name), encoding="utf-8") as fh:
        return json.load(fh)


def build(name: str) -> dict:
    return _BUILDERS[name]()


def write_bundled(directory: str | Path | None = None) -> list[Path]:
    directory = Path(directory) if directory else bundled_path("speech").parent
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name, fn in _BUILDERS.items():
        path = directory / f"{name}.json"
        path.write_text(json.dumps(fn(), indent=1) + "\n", encoding="utf-8")
        out.append(path)
    return out
