"""Calibration records and the per-exit curves derived from them."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .decision import ThresholdConfig

CSV_HEADER = ("sample_id", "location_id", "confidence", "correct")
FINAL_LOCATION = "final"
DEFAULT_CORRECTION = 0.9


class RecordError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationRecord:
    sample_id: int
    location_id: str
    confidence: float
    correct: bool


def _parse_row(row: Sequence[str], lineno: int) -> CalibrationRecord:
    if len(row) != 4:
        raise RecordError(f"line {lineno}: malformed row, expected 4 fields")
    sid, loc, conf, correct = (c.strip() for c in row)
    try:
        sample_id = int(sid)
        confidence = float(conf)
    except ValueError:
        raise RecordError(f"line {lineno}: malformed row {row!r}") from None
    if correct not in ("0", "1"):
        raise RecordError(f"line {lineno}: correct must be 0 or 1")
    if not loc:
        raise RecordError(f"line {lineno}: empty location_id")
    if not 0.0 <= confidence <= 1.0:
        raise RecordError(f"line {lineno}: confidence {confidence} out of range [0, 1]")
    return CalibrationRecord(sample_id, loc, confidence, correct == "1")


def read_records(source: str | Path | io.TextIOBase) -> list[CalibrationRecord]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as fh:
            return read_records(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise RecordError(f"expected header {','.join(CSV_HEADER)}")
    return [_parse_row(row, n) for n, row in enumerate(reader, start=2) if row]


def group_records(records: Iterable[CalibrationRecord]) -> dict[str, list[CalibrationRecord]]:
    """Group by location and check every location covers the same samples."""
    groups: dict[str, dict[int, CalibrationRecord]] = defaultdict(dict)
    for r in records:
        if r.sample_id in groups[r.location_id]:
            raise RecordError(f"duplicate record for sample {r.sample_id} at {r.location_id!r}")
        groups[r.location_id][r.sample_id] = r
    if not groups:
        raise RecordError("no calibration records")
    reference_loc, reference = next(iter(groups.items()))
    ids = set(reference)
    for loc, recs in groups.items():
        if set(recs) != ids:
            missing = sorted(ids ^ set(recs))[:5]
            raise RecordError(
                f"mismatched sample sets between {reference_loc!r} and {loc!r} (e.g. samples {missing})"
            )
    return {loc: [recs[i] for i in sorted(recs)] for loc, recs in groups.items()}


def load_records(source) -> dict[str, list[CalibrationRecord]]:
    """Read a calibration CSV (path, file object or CSV text) and group it by location."""
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    return group_records(read_records(source))


def write_records(records: Iterable[CalibrationRecord], fh) -> None:
    fh.write(",".join(CSV_HEADER) + "\n")
    for r in records:
        fh.write(f"{r.sample_id},{r.location_id},{r.confidence!r},{int(r.correct)}\n")


@dataclass(frozen=True, eq=False)
class ExitProfile:
    """Empirical pass-rate and conditional-accuracy curves of one classifier."""

    location_id: str
    confidences: np.ndarray = field(repr=False)  # ascending
    correct_from: np.ndarray = field(repr=False)  # correct count among confidences[i:]
    source: str = "validation"

    @classmethod
    def from_pairs(cls, location_id, confidences, correct, source="validation"):
        conf = np.asarray(confidences, dtype=float)
        corr = np.asarray(correct, dtype=bool)
        if conf.size == 0:
            raise RecordError(f"no records for {location_id!r}")
        order = np.argsort(conf, kind="stable")
        conf, corr = conf[order], corr[order]
        suffix = np.concatenate([np.cumsum(corr[::-1])[::-1], [0]]).astype(np.int64)
        return cls(location_id, conf, suffix, source)

    @property
    def n_samples(self) -> int:
        return int(self.confidences.size)

    def _first_passing(self, t: float) -> int:
        return int(np.searchsorted(self.confidences, t, side="left"))

    def pass_count(self, t: float) -> int:
        return self.n_samples - self._first_passing(t)

    def pass_rate(self, t: float) -> float:
        return self.pass_count(t) / self.n_samples

    def conditional_accuracy(self, t: float) -> float | None:
        i = self._first_passing(t)
        n = self.n_samples - i
        if n == 0:
            return None
        return int(self.correct_from[i]) / n

    @property
    def standalone_accuracy(self) -> float:
        return int(self.correct_from[0]) / self.n_samples

    def curves(self, grid: Iterable[float]) -> dict[str, list]:
        grid = list(grid)
        return {
            "threshold": grid,
            "pass_rate": [self.pass_rate(t) for t in grid],
            "conditional_accuracy": [self.conditional_accuracy(t) for t in grid],
        }


def profile_exit(records: Sequence[CalibrationRecord], source: str = "validation") -> ExitProfile:
    if not records:
        raise RecordError("cannot profile an empty record set")
    return ExitProfile.from_pairs(
        records[0].location_id,
        [r.confidence for r in records],
        [r.correct for r in records],
        source,
    )


def profile_all(groups: Mapping[str, Sequence[CalibrationRecord]], source="validation") -> dict[str, ExitProfile]:
    return {loc: profile_exit(recs, source) for loc, recs in groups.items()}


def apply_correction(thresholds: ThresholdConfig, factor: float) -> ThresholdConfig:
    """Shrink early-exit thresholds found on training data; the result may leave the grid."""
    if not 0 < factor <= 1:
        raise ValueError("correction factor must lie in (0, 1]")
    if factor == 1:
        return thresholds
    return thresholds.scaled(factor)


def default_viability_floor(num_classes: int) -> float:
    return min(1.0, 2.0 / num_classes)


def viability_filter(p: ExitProfile, floor: float | None = None, num_classes: int | None = None) -> bool:
    """An exit is viable if it beats the floor (default: twice random guessing)."""
    if floor is None:
        if num_classes is None:
            raise ValueError("need a floor or the class count")
        floor = default_viability_floor(num_classes)
    return p.standalone_accuracy >= floor
