"""Preictal/interictal segmentation of continuous recordings.

Times are seconds on a per-patient timeline on which every recording has a
start offset. Preictal windows tile the hour before each leading seizure,
stopping one prediction horizon short of onset. Interictal windows must lie
at least four hours from every seizure on both sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotations import MERGE_GAP_S, SeizureAnnotation, merge_leading_seizures
from .edf import EdfRecording
from .manifest import DatasetManifest, ManifestEntry
from .segment import SignalSegment, save_segment

HOUR = 3600.0
DAY = 24 * HOUR


@dataclass(frozen=True)
class LabelPolicy:
    segment_s: float = 600.0
    preictal_span_s: float = HOUR
    sph_s: float = 600.0
    interictal_gap_s: float = 4 * HOUR
    merge_gap_s: float = MERGE_GAP_S
    min_leading_seizures: int = 3
    min_interictal_s: float = 3 * HOUR
    max_seizures_per_day: int = 10


@dataclass
class PatientRecordings:
    patient_id: str
    recordings: list[tuple[float, EdfRecording]]  # (start offset on patient timeline, recording)
    seizures: list[SeizureAnnotation] = field(default_factory=list)  # patient-timeline seconds


@dataclass(frozen=True)
class PlannedSegment:
    start_s: float
    label: str
    recording: int
    seizure: int | None = None
    onset_s: float = math.nan


class NoEligiblePatientsError(ValueError):
    def __init__(self, reasons: dict[str, list[str]]):
        self.reasons = reasons
        lines = [f"  {pid}: {'; '.join(r)}" for pid, r in sorted(reasons.items())]
        super().__init__("no patient satisfies the inclusion rules:\n" + "\n".join(lines))


def max_seizures_in_window(seizures: Sequence[SeizureAnnotation], window_s: float = DAY) -> int:
    """Largest number of onsets inside any half-open window of length ``window_s``."""
    onsets = sorted(s.onset_time for s in seizures)
    best, j = 0, 0
    for i in range(len(onsets)):
        while onsets[i] - onsets[j] >= window_s:
            j += 1
        best = max(best, i - j + 1)
    return best


def _overlaps(a0: float, a1: float, b0: float, b1: float) -> bool:
    return a0 < b1 and b0 < a1


def _within_recording(t0: float, t1: float, spans: list[tuple[float, float]]) -> int | None:
    for i, (r0, r1) in enumerate(spans):
        if t0 >= r0 and t1 <= r1:
            return i
    return None


def plan_segments(patient: PatientRecordings, policy: LabelPolicy = LabelPolicy()) -> tuple[list[PlannedSegment], list[str]]:
    """Choose segment windows for one patient and list any exclusion reasons.

    An empty reason list means the patient is eligible.
    """
    seizures = sorted(patient.seizures)
    leading = merge_leading_seizures(seizures, policy.merge_gap_s)
    spans = [(off, off + rec.duration) for off, rec in patient.recordings]
    seg = policy.segment_s
    plan: list[PlannedSegment] = []

    n_tiles = int(round(policy.preictal_span_s / seg))
    predicted = 0
    for k, sz in enumerate(leading):
        first = sz.onset_time - policy.sph_s - policy.preictal_span_s
        found = False
        for t in range(n_tiles):
            t0 = first + t * seg
            t1 = t0 + seg
            rec = _within_recording(t0, t1, spans)
            if rec is None or any(_overlaps(t0, t1, s.onset_time, s.end_time) for s in seizures):
                continue
            plan.append(PlannedSegment(t0, "preictal", rec, k, sz.onset_time))
            found = True
        predicted += found

    gap = policy.interictal_gap_s
    n_inter = 0
    for r, (r0, r1) in enumerate(spans):
        t0 = r0
        while t0 + seg <= r1 + 1e-9:
            t1 = t0 + seg
            if all(t1 <= s.onset_time - gap or t0 >= s.end_time + gap for s in seizures):
                plan.append(PlannedSegment(t0, "interictal", r))
                n_inter += 1
            t0 = t1

    reasons = []
    if predicted < policy.min_leading_seizures:
        reasons.append(f"{predicted} leading seizures with preictal data (< {policy.min_leading_seizures})")
    if n_inter * seg < policy.min_interictal_s:
        reasons.append(f"{n_inter * seg / HOUR:.2f} h interictal (< {policy.min_interictal_s / HOUR:g} h)")
    per_day = max_seizures_in_window(seizures)
    if per_day > policy.max_seizures_per_day:
        reasons.append(f"{per_day} seizures within 24 h (> {policy.max_seizures_per_day})")
    plan.sort(key=lambda p: p.start_s)
    return plan, reasons


def cut_segment(patient: PatientRecordings, planned: PlannedSegment, policy: LabelPolicy) -> SignalSegment:
    offset, rec = patient.recordings[planned.recording]
    rates = rec.sampling_rates
    if len(set(rates)) != 1:
        raise ValueError(f"patient {patient.patient_id}: channels sampled at differing rates {sorted(set(rates))}")
    rate = rates[0]
    i0 = int(round((planned.start_s - offset) * rate))
    n = int(round(policy.segment_s * rate))
    samples = rec.matrix()[:, i0 : i0 + n]
    return SignalSegment(patient.patient_id, samples, rate, planned.label, "real", planned.start_s)


def build_dataset(
    patients: Sequence[PatientRecordings],
    out_dir,
    policy: LabelPolicy = LabelPolicy(),
    name: str = "dataset",
) -> DatasetManifest:
    """Segment every eligible patient, write PFSG files under ``out_dir`` and
    return the manifest (also saved as ``out_dir/manifest.csv``)."""
    out_dir = Path(out_dir)
    reasons: dict[str, list[str]] = {}
    eligible = []
    for p in patients:
        plan, why = plan_segments(p, policy)
        if why:
            reasons[p.patient_id] = why
        else:
            eligible.append((p, plan))
    if not eligible:
        raise NoEligiblePatientsError(reasons)

    channels = {rec.signal_count for p, _ in eligible for _, rec in p.recordings}
    if len(channels) != 1:
        raise ValueError(f"channel count differs across recordings: {sorted(channels)}")
    seg_dir = out_dir / "segments"
    seg_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for p, plan in eligible:
        for planned in plan:
            seg = cut_segment(p, planned, policy)
            sid = f"{p.patient_id}_{planned.label[:3]}_{int(planned.start_s):09d}"
            save_segment(seg, seg_dir / f"{sid}.pfsg")
            entries.append(
                ManifestEntry(
                    id=sid,
                    path=f"segments/{sid}.pfsg",
                    patient=p.patient_id,
                    label=planned.label,
                    provenance="real",
                    seizure=planned.seizure,
                    start_s=planned.start_s,
                    duration_s=policy.segment_s,
                    onset_s=planned.onset_s,
                )
            )
    manifest = DatasetManifest(name, channels.pop(), entries, out_dir)
    manifest.save(out_dir / "manifest.csv")
    return manifest


def interictal_hours(manifest: DatasetManifest) -> float:
    return float(np.sum([e.duration_s for e in manifest if e.label == "interictal"])) / HOUR
