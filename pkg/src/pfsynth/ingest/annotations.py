"""Seizure annotations: sidecar parsing and leading-seizure merging."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

MERGE_GAP_S = 30 * 60


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class SeizureAnnotation:
    onset_time: float
    end_time: float

    def __post_init__(self):
        if not self.end_time > self.onset_time:
            raise AnnotationError(f"seizure end {self.end_time} must follow onset {self.onset_time}")

    def shifted(self, offset: float) -> "SeizureAnnotation":
        return SeizureAnnotation(self.onset_time + offset, self.end_time + offset)


def parse_annotations(text: str) -> list[SeizureAnnotation]:
    """Parse sidecar lines ``onset_s,end_s``; blank lines and ``#`` comments are skipped."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise AnnotationError(f"line {lineno}: expected 'onset_s,end_s', got {line!r}")
        try:
            out.append(SeizureAnnotation(float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise AnnotationError(f"line {lineno}: {exc}") from None
    return sorted(out)


def read_annotations(path) -> list[SeizureAnnotation]:
    return parse_annotations(Path(path).read_text())


def format_annotations(seizures: Sequence[SeizureAnnotation]) -> str:
    return "".join(f"{s.onset_time!r},{s.end_time!r}\n" for s in seizures)


def merge_leading_seizures(seizures: Sequence[SeizureAnnotation], gap_s: float = MERGE_GAP_S) -> list[SeizureAnnotation]:
    """Collapse seizures that start less than ``gap_s`` after the previous one ended.

    A gap of exactly ``gap_s`` keeps the events separate.
    """
    for a, b in zip(seizures, seizures[1:]):
        if b.onset_time < a.onset_time:
            raise AnnotationError("annotations must be sorted by onset")
    merged: list[SeizureAnnotation] = []
    for s in seizures:
        if merged and s.onset_time - merged[-1].end_time < gap_s:
            last = merged[-1]
            merged[-1] = SeizureAnnotation(last.onset_time, max(last.end_time, s.end_time))
        else:
            merged.append(s)
    return merged
