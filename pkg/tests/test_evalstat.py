import math

import mpmath
import numpy as np
import pytest
from alarm_oracle import oracle_score
from hypothesis import given, settings
from hypothesis import strategies as st

from pfsynth.evalstat import (
    ALPHA,
    SOP_S,
    SPH_S,
    AlarmOutcome,
    EvalConfig,
    EvalError,
    EvalReport,
    PredictionRecord,
    aggregate_reports,
    alarm_probability,
    compute_metrics,
    evaluate_records,
    hanley_mcneil_p,
    is_significant,
    load_reports,
    raise_alarms,
    records_from_csv,
    records_to_csv,
    reports_from_csv,
    reports_to_csv,
    roc_auc,
    roc_csv,
    roc_curve,
    save_reports,
    schelter_p,
    score_alarms,
)

MIN = 60.0


def rec(t_min, p, label="interictal", patient="p1", sid=None):
    return PredictionRecord(sid or f"s{t_min}", patient, label, p, t_min * MIN)


# -- alarms --------------------------------------------------------------------------

def test_constants():
    assert SPH_S == 10 * MIN and SOP_S == 30 * MIN
    assert ALPHA == 0.0125


def test_raise_alarm_examples():
    assert len(raise_alarms([rec(10, 0.9)], 0.5)) == 1
    assert len(raise_alarms([rec(10, 0.9), rec(20, 0.8)], 0.5, SOP_S)) == 1
    assert raise_alarms([rec(10, 0.2), rec(20, 0.49)], 0.5) == []


def test_refractory_boundary():
    alarms = raise_alarms([rec(0, 0.9), rec(29, 0.9), rec(30, 0.9), rec(59, 0.9), rec(60, 0.9)], 0.5, SOP_S)
    assert [a.time / MIN for a in alarms] == [0, 30, 60]
    assert len(raise_alarms([rec(0, 0.9), rec(10, 0.9)], 0.5, None)) == 2


def test_refractory_per_patient():
    alarms = raise_alarms([rec(0, 0.9, patient="a"), rec(5, 0.9, patient="b")], 0.5)
    assert [a.patient for a in alarms] == ["a", "b"]


def test_raise_alarms_errors():
    with pytest.raises(EvalError):
        raise_alarms([rec(10, 0.9), rec(5, 0.9)])
    with pytest.raises(EvalError):
        raise_alarms([PredictionRecord("x", "p", "preictal", 0.9, math.nan)])


def test_score_examples():
    cfg = EvalConfig()
    ok = score_alarms([0.0], [15 * MIN], cfg)
    assert (ok.n_predicted, ok.false_alarms, ok.alarm_true) == (1, 0, [True])
    early = score_alarms([0.0], [5 * MIN], cfg)
    assert (early.n_predicted, early.false_alarms, early.seizure_credited) == (0, 1, [False])
    none = score_alarms([0.0], [], cfg)
    assert none.false_alarms == 1 and none.n_seizures == 0


def test_window_edges():
    cfg = EvalConfig()
    assert score_alarms([0.0], [10 * MIN], cfg).n_predicted == 0
    assert score_alarms([0.0], [40 * MIN], cfg).n_predicted == 1
    assert score_alarms([0.0], [40 * MIN + 1], cfg).n_predicted == 0


def test_seizure_credited_once():
    out = score_alarms([0.0, 5 * MIN], [20 * MIN], EvalConfig())
    assert out.alarm_true == [True, True]
    assert out.credit == [0, None]
    assert out.n_predicted == 1 and out.false_alarms == 0


def random_timeline(rng):
    n_a, n_s = rng.integers(0, 11), rng.integers(0, 11)
    # minute grid so window edges are hit exactly
    alarms = (rng.integers(0, 240, n_a) * MIN).tolist()
    onsets = (rng.integers(0, 280, n_s) * MIN).tolist()
    return alarms, onsets


def test_score_matches_exhaustive_oracle():
    rng = np.random.default_rng(2024)
    cfg = EvalConfig()
    for _ in range(2000):
        alarms, onsets = random_timeline(rng)
        got = score_alarms(alarms, onsets, cfg)
        want = oracle_score(alarms, onsets, cfg.sph_s, cfg.sop_s)
        assert got.alarm_true == want["alarm_true"]
        assert got.seizure_credited == want["credited"]
        assert got.n_predicted == want["n_predicted"]
        assert got.false_alarms == want["false_alarms"]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 300), max_size=10), st.lists(st.integers(0, 300), max_size=10))
def test_score_invariants(alarm_min, onset_min):
    out = score_alarms([a * MIN for a in alarm_min], [o * MIN for o in onset_min], EvalConfig())
    assert out.n_predicted <= min(out.n_seizures, len(alarm_min))
    assert out.false_alarms + sum(out.alarm_true) == len(alarm_min)
    credited = [c for c in out.credit if c is not None]
    assert len(credited) == len(set(credited)) == out.n_predicted


# -- metrics -------------------------------------------------------------------------

def test_compute_metrics_example():
    outcome = AlarmOutcome(4, 3, 3, [], [], [])
    labels = ["preictal"] * 4 + ["interictal"] * 6
    probs = [0.9, 0.8, 0.7, 0.2, 0.1, 0.1, 0.6, 0.2, 0.3, 0.4]
    r = compute_metrics("p", outcome, 10.0, labels, probs, 0.5)
    assert r.fpr_per_h == pytest.approx(0.3)
    assert r.sensitivity == pytest.approx(75.0)
    assert r.specificity == pytest.approx(100 * 5 / 6)
    assert r.accuracy == pytest.approx(80.0)
    assert r.p_value == pytest.approx(schelter_p(0.3, 0.5, 3, 4))


def test_compute_metrics_zero_hours():
    with pytest.raises(EvalError):
        compute_metrics("p", AlarmOutcome(1, 0, 0, [], [], []), 0.0)


def test_evaluate_records_end_to_end():
    onsets = {"p1": [100 * MIN]}
    recs = [rec(t, 0.1) for t in range(0, 60, 10)] + [rec(70, 0.9, "preictal"), rec(80, 0.9, "preictal")]
    (r,) = evaluate_records(recs, onsets, {"p1": 1.0})
    # the alarm at 70 min predicts the onset at 100 min; the record at 80 min is suppressed
    assert (r.n_predicted, r.false_alarms, r.sensitivity) == (1, 0, 100.0)
    assert r.auc == 1.0


# -- ROC -----------------------------------------------------------------------------

def pair_count_auc(labels, scores):
    pos = [s for lab, s in zip(labels, scores) if lab]
    neg = [s for lab, s in zip(labels, scores) if not lab]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_roc_examples():
    assert roc_auc([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]) == 1.0
    assert roc_auc([1, 1, 0, 0], [0.1, 0.2, 0.8, 0.9]) == 0.0
    assert roc_auc([1, 0], [0.5, 0.5]) == 0.5
    fpr, tpr, thr = roc_curve(["preictal", "interictal"], [0.7, 0.3])
    assert fpr[0] == 0 and tpr[0] == 0 and thr[0] == np.inf
    assert fpr[-1] == 1 and tpr[-1] == 1


def test_roc_csv_header():
    text = roc_csv([1, 0, 1], [0.3, 0.2, 0.9])
    assert text.splitlines()[0] == "fpr,tpr,threshold"
    assert len(text.splitlines()) == 1 + 4  # header plus (0, 0) and three distinct thresholds


def test_roc_needs_both_classes():
    with pytest.raises(EvalError):
        roc_auc([1, 1], [0.2, 0.3])


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 8)), min_size=2, max_size=40))
def test_auc_matches_pair_count(pairs):
    labels = [lab for lab, _ in pairs]
    if all(labels) or not any(labels):
        return
    scores = [s / 8 for _, s in pairs]
    assert roc_auc(labels, scores) == pytest.approx(pair_count_auc(labels, scores), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(-64, 64)), min_size=2, max_size=30))
def test_auc_monotone_invariance(pairs):
    labels = [lab for lab, _ in pairs]
    if all(labels) or not any(labels):
        return
    s = np.array([v for _, v in pairs], dtype=np.float64) / 16
    # both transforms are strictly increasing and exact on this dyadic grid
    assert roc_auc(labels, s) == roc_auc(labels, 2 * s - 1) == roc_auc(labels, s**3)


# -- significance --------------------------------------------------------------------

def mp_schelter(fpr, sop_h, n, N):
    mpmath.mp.dps = 50
    P = 1 - mpmath.exp(-mpmath.mpf(fpr) * mpmath.mpf(sop_h))
    return sum(mpmath.binomial(N, k) * P**k * (1 - P) ** (N - k) for k in range(n, N + 1))


@pytest.mark.parametrize("fpr, sop_h, n, N", [(0.15, 0.5, 3, 4), (0.01, 0.5, 5, 7), (1.0, 0.5, 1, 1), (0.3, 0.25, 2, 10), (1e-6, 0.5, 1, 3)])
def test_schelter_against_high_precision(fpr, sop_h, n, N):
    assert alarm_probability(fpr, sop_h) == pytest.approx(float(1 - mpmath.exp(-fpr * sop_h)), abs=1e-15)
    assert abs(schelter_p(fpr, sop_h, n, N) - float(mp_schelter(fpr, sop_h, n, N))) <= 1e-12


def test_schelter_edges():
    assert schelter_p(0.2, 0.5, 0, 5) == 1.0
    assert schelter_p(0.0, 0.5, 1, 5) == 0.0
    with pytest.raises(ValueError):
        schelter_p(0.2, 0.5, 6, 5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 5), st.floats(0, 5), st.integers(1, 10), st.integers(0, 10))
def test_schelter_monotone(f1, f2, n, extra):
    N = n + extra
    lo, hi = sorted((f1, f2))
    assert schelter_p(lo, 0.5, n, N) <= schelter_p(hi, 0.5, n, N) + 1e-15
    assert schelter_p(lo, 0.5, n, N) <= schelter_p(lo, 0.5, n, N + 1) + 1e-15


def mp_hanley(a1, p1, n1, a2, p2, n2):
    mpmath.mp.dps = 50

    def var(a, p, n):
        a = mpmath.mpf(a)
        q1, q2 = a / (2 - a), 2 * a * a / (1 + a)
        return (a * (1 - a) + (p - 1) * (q1 - a * a) + (n - 1) * (q2 - a * a)) / (p * n)

    z = (mpmath.mpf(a1) - mpmath.mpf(a2)) / mpmath.sqrt(var(a1, p1, n1) + var(a2, p2, n2))
    return mpmath.erfc(z / mpmath.sqrt(2)) / 2


@pytest.mark.parametrize("args", [(0.9, 30, 70, 0.8, 30, 70), (0.75, 10, 40, 0.74, 12, 50), (0.6, 5, 5, 0.95, 8, 9)])
def test_hanley_mcneil_against_high_precision(args):
    assert hanley_mcneil_p(*args) == pytest.approx(float(mp_hanley(*args)), abs=1e-12)


def test_hanley_mcneil_equal_and_errors():
    assert hanley_mcneil_p(0.8, 20, 30, 0.8, 25, 40) == 0.5
    with pytest.raises(ValueError):
        hanley_mcneil_p(1.0, 20, 30, 0.8, 20, 30)
    with pytest.raises(ValueError):
        hanley_mcneil_p(0.8, 1, 30, 0.7, 20, 30)


def test_bonferroni():
    assert is_significant(0.012)
    assert not is_significant(0.0125)
    assert not is_significant(0.03)


# -- reports -------------------------------------------------------------------------

def sample_reports():
    return [
        EvalReport("a", 80.0, 0.1, 90.0, 85.0, 0.9, 0.01, 5, 4, 2, 20.0),
        EvalReport("b", 60.0, 0.3, 70.0, 65.0, math.nan, 0.2, 5, 3, 6, 20.0),
    ]


def test_report_csv_round_trip(tmp_path):
    reps = sample_reports()
    text = reports_to_csv(reps)
    assert text.splitlines()[0] == "patient,sensitivity,fpr_per_h,specificity,accuracy,auc,p_value,n_seizures,n_predicted,false_alarms,interictal_hours"
    back = reports_from_csv(text)
    assert reports_to_csv(back) == text
    save_reports(reps, tmp_path / "r.csv")
    assert reports_to_csv(load_reports(tmp_path / "r.csv")) == text
    with pytest.raises(EvalError):
        reports_from_csv("bad,header\n")


def test_record_csv_round_trip():
    recs = [rec(1, 0.25, "preictal"), rec(2, 1 / 3)]
    text = records_to_csv(recs)
    assert records_from_csv(text) == recs


def test_report_validation():
    with pytest.raises(ValueError):
        EvalReport("x", 101.0, 0.1, 50.0, 50.0)
    with pytest.raises(ValueError):
        EvalReport("x", 50.0, -0.1, 50.0, 50.0)
    with pytest.raises(ValueError):
        EvalReport("x", 50.0, 0.1, 50.0, 50.0, n_seizures=2, n_predicted=3)


def test_aggregate():
    avg = aggregate_reports(sample_reports())
    assert avg.patient == "Average"
    assert avg.sensitivity == 70.0 and avg.fpr_per_h == pytest.approx(0.2)
    assert avg.auc == 0.9  # NaN skipped
    assert (avg.n_seizures, avg.n_predicted, avg.false_alarms) == (10, 7, 8)
    with pytest.raises(EvalError):
        aggregate_reports([])
