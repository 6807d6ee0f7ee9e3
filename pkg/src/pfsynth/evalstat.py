"""Alarm scoring, prediction metrics, ROC analysis and significance tests.

An alarm raised at time t is a true prediction iff a seizure onset falls in
``(t + SPH, t + SPH + SOP]``. Seizures are credited greedily, earliest alarm
first, and each alarm credits at most one seizure. False alarms are counted
per hour of interictal recording.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPH_S = 600.0
SOP_S = 1800.0
ALPHA = 0.05 / 4  # Bonferroni over the four train/test combinations


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    sph_s: float = SPH_S
    sop_s: float = SOP_S
    threshold: float = 0.5
    refractory: bool = True  # suppress alarms within one SOP of the previous one

    def __post_init__(self):
        if self.sph_s <= 0 or self.sop_s <= 0:
            raise ValueError("SPH and SOP must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")


# -- prediction records -----------------------------------------------------------------

RECORD_HEADER = ["segment_id", "patient", "true_label", "p_preictal", "end_time_s"]


@dataclass(frozen=True)
class PredictionRecord:
    segment_id: str
    patient: str
    true_label: str
    p_preictal: float
    end_time_s: float

    def __post_init__(self):
        if not 0.0 <= self.p_preictal <= 1.0:
            raise ValueError(f"probability {self.p_preictal} outside [0, 1]")


def records_to_csv(records: Iterable[PredictionRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_HEADER)
    for r in records:
        w.writerow([r.segment_id, r.patient, r.true_label, repr(float(r.p_preictal)), repr(float(r.end_time_s))])
    return buf.getvalue()


def records_from_csv(text: str) -> list[PredictionRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != RECORD_HEADER:
        raise EvalError(f"prediction CSV header {reader.fieldnames} != {RECORD_HEADER}")
    return [
        PredictionRecord(r["segment_id"], r["patient"], r["true_label"], float(r["p_preictal"]), float(r["end_time_s"]))
        for r in reader
    ]


# -- alarms ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlarmEvent:
    patient: str
    time: float


def raise_alarms(records: Sequence[PredictionRecord], threshold: float = 0.5, refractory_s: float | None = SOP_S) -> list[AlarmEvent]:
    """Alarm at a record's end time when ``p >= threshold`` and no alarm fired
    less than ``refractory_s`` earlier for the same patient."""
    last_t: dict[str, float] = {}
    last_alarm: dict[str, float] = {}
    out = []
    for r in records:
        t = r.end_time_s
        if math.isnan(t):
            raise EvalError(f"record {r.segment_id} has no end time")
        if r.patient in last_t and t < last_t[r.patient]:
            raise EvalError(f"records for patient {r.patient} are not time-ordered at {r.segment_id}")
        last_t[r.patient] = t
        if r.p_preictal < threshold:
            continue
        prev = last_alarm.get(r.patient)
        if refractory_s is not None and prev is not None and t - prev < refractory_s:
            continue
        last_alarm[r.patient] = t
        out.append(AlarmEvent(r.patient, t))
    return out


@dataclass
class AlarmOutcome:
    n_seizures: int
    n_predicted: int
    false_alarms: int
    alarm_true: list[bool]  # per alarm, in time order
    seizure_credited: list[bool]  # per onset, in time order
    credit: list[int | None]  # per alarm: index of the credited onset


def in_window(alarm_t: float, onset: float, sph_s: float = SPH_S, sop_s: float = SOP_S) -> bool:
    return alarm_t + sph_s < onset <= alarm_t + sph_s + sop_s


def score_alarms(alarm_times: Sequence[float], onsets: Sequence[float], config: EvalConfig = EvalConfig()) -> AlarmOutcome:
    alarms = sorted(float(a) for a in alarm_times)
    sz = sorted(float(o) for o in onsets)
    credited = [False] * len(sz)
    alarm_true, credit = [], []
    for t in alarms:
        hits = [k for k, o in enumerate(sz) if in_window(t, o, config.sph_s, config.sop_s)]
        alarm_true.append(bool(hits))
        free = [k for k in hits if not credited[k]]
        if free:
            credited[free[0]] = True
            credit.append(free[0])
        else:
            credit.append(None)
    return AlarmOutcome(
        n_seizures=len(sz),
        n_predicted=sum(credited),
        false_alarms=sum(not a for a in alarm_true),
        alarm_true=alarm_true,
        seizure_credited=credited,
        credit=credit,
    )


# -- ROC ------------------------------------------------------------------------------

def _binary(labels) -> np.ndarray:
    y = np.asarray([1 if (v == "preictal" or v is True or v == 1) else 0 for v in labels], dtype=int)
    if y.min(initial=1) == y.max(initial=0) or len(y) == 0:
        raise EvalError("ROC analysis needs both classes present")
    return y


def roc_curve(labels, scores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(fpr, tpr, thresholds)`` over all distinct score thresholds, descending.

    The first point is (0, 0) at threshold +inf; tied scores move both rates
    at once, so the trapezoid over the curve counts ties as half.
    """
    y = _binary(labels)
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != y.shape:
        raise EvalError("labels and scores differ in length")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    distinct = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[distinct]
    fp = (distinct + 1) - tp
    tpr = np.r_[0.0, tp / y.sum()]
    fpr = np.r_[0.0, fp / (len(y) - y.sum())]
    return fpr, tpr, np.r_[np.inf, s[distinct]]


def roc_auc(labels, scores) -> float:
    fpr, tpr, _ = roc_curve(labels, scores)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_csv(labels, scores) -> str:
    fpr, tpr, thr = roc_curve(labels, scores)
    lines = ["fpr,tpr,threshold"]
    lines += [f"{f!r},{t!r},{h!r}" for f, t, h in zip(fpr.tolist(), tpr.tolist(), thr.tolist())]
    return "\n".join(lines) + "\n"


# -- significance -----------------------------------------------------------------------

def alarm_probability(fpr_per_h: float, sop_h: float) -> float:
    """Chance that an unspecific predictor raises an alarm within one SOP."""
    return -math.expm1(-fpr_per_h * sop_h)


def schelter_p(fpr_per_h: float, sop_h: float, n: int, N: int) -> float:
    """Probability of predicting at least ``n`` of ``N`` seizures by chance."""
    if fpr_per_h < 0:
        raise ValueError("FPR must be nonnegative")
    if not 0 <= n <= N:
        raise ValueError(f"need 0 <= n <= N, got n={n}, N={N}")
    P = alarm_probability(fpr_per_h, sop_h)
    if n == 0:
        return 1.0
    return float(min(1.0, sum(math.comb(N, k) * P**k * (1.0 - P) ** (N - k) for k in range(n, N + 1))))


def normal_sf(z: float) -> float:
    """Upper tail of the standard normal."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def auc_standard_error(auc: float, n_pos: int, n_neg: int) -> float:
    q1 = auc / (2.0 - auc)
    q2 = 2.0 * auc * auc / (1.0 + auc)
    var = (auc * (1 - auc) + (n_pos - 1) * (q1 - auc * auc) + (n_neg - 1) * (q2 - auc * auc)) / (n_pos * n_neg)
    return math.sqrt(var)


def hanley_mcneil_p(auc1: float, n_pos1: int, n_neg1: int, auc2: float, n_pos2: int, n_neg2: int) -> float:
    """One-tailed p for the hypothesis ``auc1 > auc2``."""
    for a in (auc1, auc2):
        if not 0.0 < a < 1.0:
            raise ValueError(f"AUC must lie in (0, 1), got {a}")
    if min(n_pos1, n_neg1, n_pos2, n_neg2) < 2:
        raise ValueError("each class needs at least two samples")
    if auc1 == auc2:
        return 0.5
    se = math.hypot(auc_standard_error(auc1, n_pos1, n_neg1), auc_standard_error(auc2, n_pos2, n_neg2))
    return normal_sf((auc1 - auc2) / se)


def is_significant(p: float, alpha: float = ALPHA) -> bool:
    return p < alpha


# -- reports --------------------------------------------------------------------------

@dataclass
class EvalReport:
    patient: str
    sensitivity: float  # %
    fpr_per_h: float
    specificity: float  # %
    accuracy: float  # %
    auc: float = math.nan
    p_value: float = math.nan
    n_seizures: float = 0
    n_predicted: float = 0
    false_alarms: float = 0
    interictal_hours: float = 0.0

    def __post_init__(self):
        for name in ("sensitivity", "specificity", "accuracy"):
            v = getattr(self, name)
            if not math.isnan(v) and not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} {v} outside [0, 100]")
        if not math.isnan(self.fpr_per_h) and self.fpr_per_h < 0:
            raise ValueError("FPR must be nonnegative")
        if not math.isnan(self.auc) and not 0.0 <= self.auc <= 1.0:
            raise ValueError(f"AUC {self.auc} outside [0, 1]")
        if self.n_predicted > self.n_seizures:
            raise ValueError("more predicted seizures than seizures")


REPORT_HEADER = [f.name for f in fields(EvalReport)]


def reports_to_csv(reports: Iterable[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in reports:
        w.writerow([r.patient] + [repr(float(v)) for v in list(asdict(r).values())[1:]])
    return buf.getvalue()


def reports_from_csv(text: str) -> list[EvalReport]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != REPORT_HEADER:
        raise EvalError(f"report CSV header {reader.fieldnames} != {REPORT_HEADER}")
    return [EvalReport(row["patient"], *[float(row[k]) for k in REPORT_HEADER[1:]]) for row in reader]


def compute_metrics(
    patient: str,
    outcome: AlarmOutcome,
    interictal_hours: float,
    labels: Sequence[str] = (),
    probs: Sequence[float] = (),
    threshold: float = 0.5,
    sop_h: float = SOP_S / 3600.0,
) -> EvalReport:
    if interictal_hours <= 0:
        raise EvalError(f"patient {patient}: no interictal hours to normalize false alarms")
    sens = 100.0 * outcome.n_predicted / outcome.n_seizures if outcome.n_seizures else math.nan
    fpr = outcome.false_alarms / interictal_hours
    y = np.asarray([lab == "preictal" for lab in labels], dtype=bool)
    pred = np.asarray(probs, dtype=np.float64) >= threshold
    tn = int(np.sum(~y & ~pred))
    neg = int(np.sum(~y))
    spec = 100.0 * tn / neg if neg else math.nan
    acc = 100.0 * float(np.mean(y == pred)) if len(y) else math.nan
    auc = roc_auc(y, probs) if 0 < y.sum() < len(y) else math.nan
    p = schelter_p(fpr, sop_h, outcome.n_predicted, outcome.n_seizures) if outcome.n_seizures else math.nan
    return EvalReport(
        patient, sens, fpr, spec, acc, auc, p,
        outcome.n_seizures, outcome.n_predicted, outcome.false_alarms, interictal_hours,
    )


def evaluate_records(
    records: Sequence[PredictionRecord],
    onsets: dict[str, Sequence[float]],
    interictal_hours: dict[str, float],
    config: EvalConfig = EvalConfig(),
) -> list[EvalReport]:
    """One report per patient from time-ordered prediction records."""
    by_patient: dict[str, list[PredictionRecord]] = defaultdict(list)
    for r in records:
        by_patient[r.patient].append(r)
    reports = []
    refractory = config.sop_s if config.refractory else None
    for pid in sorted(by_patient):
        recs = sorted(by_patient[pid], key=lambda r: r.end_time_s)
        alarms = raise_alarms(recs, config.threshold, refractory)
        outcome = score_alarms([a.time for a in alarms], onsets.get(pid, []), config)
        reports.append(
            compute_metrics(
                pid,
                outcome,
                interictal_hours.get(pid, 0.0),
                [r.true_label for r in recs],
                [r.p_preictal for r in recs],
                config.threshold,
                config.sop_s / 3600.0,
            )
        )
    return reports


def aggregate_reports(reports: Sequence[EvalReport], label: str = "Average") -> EvalReport:
    """Unweighted column means of the metric columns (NaN entries skipped);
    count columns are summed."""
    if not reports:
        raise EvalError("no reports to aggregate")

    def mean(name):
        vals = [getattr(r, name) for r in reports if not math.isnan(getattr(r, name))]
        return float(np.mean(vals)) if vals else math.nan

    def total(name):
        return float(sum(getattr(r, name) for r in reports))

    return EvalReport(
        label,
        mean("sensitivity"),
        mean("fpr_per_h"),
        mean("specificity"),
        mean("accuracy"),
        mean("auc"),
        mean("p_value"),
        total("n_seizures"),
        total("n_predicted"),
        total("false_alarms"),
        total("interictal_hours"),
    )


def save_reports(reports: Sequence[EvalReport], path) -> None:
    Path(path).write_text(reports_to_csv(reports))


def load_reports(path) -> list[EvalReport]:
    return reports_from_csv(Path(path).read_text())
