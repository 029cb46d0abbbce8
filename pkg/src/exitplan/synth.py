"""Synthetic calibration records for exercising the planner without real models.

A generator spec describes every classifier's accuracy and the Beta
distributions its confidence follows for correct and wrong predictions::

    {
      "mode": "independent-factorial",     # or "independent", "shared-noise"
      "strata": 13,                        # outcomes per early exit (factorial)
      "final_strata": 4,                   # outcomes of the final classifier (factorial)
      "samples": 1000,                     # sample count (other modes)
      "rho": 1.0,                          # share of common noise (shared-noise)
      "locations": [{"id": "b1", "accuracy": 0.6,
                     "confidence_correct": [5, 2], "confidence_wrong": [2, 4]}],
      "final": {"id": "final", "accuracy": 0.95}
    }

``independent-factorial`` crosses every early exit's outcomes with every other
exit's, so the joint record set is exactly the product of its marginals.
``shared-noise`` drives all classifiers of a sample from common uniforms, which
makes their outcomes strongly correlated.
"""

from __future__ import annotations

import io
import itertools
import math
from typing import Mapping

import numpy as np
from scipy.stats import beta as beta_dist

from .profiles import FINAL_LOCATION, CalibrationRecord, write_records

MODES = ("independent-factorial", "independent", "shared-noise")
DEFAULT_CORRECT_BETA = (5.0, 2.0)
DEFAULT_WRONG_BETA = (2.0, 4.0)
MAX_FACTORIAL_SAMPLES = 2_000_000


class GeneratorSpecError(ValueError):
    pass


def _location_model(raw: Mapping) -> dict:
    acc = float(raw.get("accuracy", -1))
    if not 0.0 <= acc <= 1.0:
        raise GeneratorSpecError(f"location {raw.get('id')!r}: accuracy must lie in [0, 1]")
    model = {"id": str(raw["id"]), "accuracy": acc}
    for key, default in (("confidence_correct", DEFAULT_CORRECT_BETA), ("confidence_wrong", DEFAULT_WRONG_BETA)):
        a, b = (float(x) for x in raw.get(key, default))
        if not (a > 0 and b > 0):
            raise GeneratorSpecError(f"location {model['id']!r}: Beta parameters must be positive")
        model[key] = (a, b)
    return model


def _draw(model: dict, u_correct: np.ndarray, u_conf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    correct = u_correct < model["accuracy"]
    conf = np.where(
        correct,
        beta_dist.ppf(u_conf, *model["confidence_correct"]),
        beta_dist.ppf(u_conf, *model["confidence_wrong"]),
    )
    return np.round(np.clip(conf, 0.0, 1.0), 6), correct


def generate_records(spec: Mapping, seed: int = 0) -> list[CalibrationRecord]:
    mode = spec.get("mode", "independent")
    if mode not in MODES:
        raise GeneratorSpecError(f"unknown mode {mode!r}; expected one of {MODES}")
    try:
        models = [_location_model(raw) for raw in spec["locations"]]
        final = _location_model({"id": FINAL_LOCATION, **spec["final"]})
    except KeyError as exc:
        raise GeneratorSpecError(f"generator spec missing {exc}") from None
    ids = [m["id"] for m in models] + [final["id"]]
    if len(set(ids)) != len(ids):
        raise GeneratorSpecError("location ids must be unique")
    rng = np.random.default_rng(seed)

    if mode == "independent-factorial":
        strata = int(spec.get("strata", 13))
        final_strata = int(spec.get("final_strata", 1))
        if strata < 1 or final_strata < 1:
            raise GeneratorSpecError("strata counts must be positive")
        n = strata ** len(models) * final_strata
        if n > MAX_FACTORIAL_SAMPLES:
            raise GeneratorSpecError(f"factorial design would need {n} samples")
        outcomes = []
        for m in models + [final]:
            size = final_strata if m is final else strata
            outcomes.append(_draw(m, rng.random(size), rng.random(size)))
        sizes = [len(o[0]) for o in outcomes]
        # sample s takes outcome idx[j] at classifier j
        grid = np.array(list(itertools.product(*(range(s) for s in sizes))), dtype=int).T
        columns = [(o[0][g], o[1][g]) for o, g in zip(outcomes, grid)]
    else:
        n = int(spec.get("samples", 1000))
        if n < 1:
            raise GeneratorSpecError("samples must be positive")
        rho = float(spec.get("rho", 1.0 if mode == "shared-noise" else 0.0))
        if not 0.0 <= rho <= 1.0:
            raise GeneratorSpecError("rho must lie in [0, 1]")
        shared_c, shared_v = rng.random(n), rng.random(n)
        columns = []
        for m in models + [final]:
            own_c, own_v = rng.random(n), rng.random(n)
            if mode == "shared-noise":
                pick = rng.random(n) < rho
                own_c = np.where(pick, shared_c, own_c)
                own_v = np.where(pick, shared_v, own_v)
            columns.append(_draw(m, own_c, own_v))

    records = []
    for loc, (conf, corr) in zip(ids, columns):
        records.extend(
            CalibrationRecord(i, loc, float(c), bool(k)) for i, (c, k) in enumerate(zip(conf, corr))
        )
    return records


def generate_synthetic_profiles(spec: Mapping, seed: int = 0) -> str:
    """Reproducible calibration CSV text for a generator spec."""
    buf = io.StringIO()
    write_records(generate_records(spec, seed), buf)
    return buf.getvalue()


def depth_generator_spec(
    location_ids,
    num_classes: int,
    final_accuracy: float = 0.93,
    mode: str = "independent",
    samples: int = 1000,
    gamma: float = 0.7,
    floor_accuracy: float | None = None,
    **extra,
) -> dict:
    """Spec whose exit accuracy rises from ``floor_accuracy`` (default: chance)
    toward the final accuracy with depth."""
    n = len(location_ids)
    chance = 1.0 / num_classes if floor_accuracy is None else floor_accuracy
    locs = []
    for i, loc in enumerate(location_ids):
        frac = ((i + 1) / (n + 1)) ** gamma
        locs.append({"id": loc, "accuracy": round(chance + (final_accuracy - chance) * frac, 6)})
    return {
        "mode": mode,
        "samples": samples,
        "locations": locs,
        "final": {"accuracy": final_accuracy},
        **extra,
    }
