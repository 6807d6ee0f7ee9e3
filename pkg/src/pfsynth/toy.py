"""Deterministic stand-in corpora so every stage runs without clinical data.

* ``two_blob_images``: 8x8 single-channel images with two Gaussian blobs,
  used to exercise GAN training at desk scale.
* ``write_toy_spectrograms``: 32x32x3 spectrogram-like images where the
  preictal class is bright in the top half and the interictal class in the
  bottom half, laid out on per-patient timelines with seizure onsets.
* ``write_toy_edf``: multi-hour EDF recordings plus seizure annotations
  whose preictal stretches carry a distinct rhythm, for the ingest stage.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .ingest.annotations import SeizureAnnotation, format_annotations
from .ingest.dataset import LabelPolicy
from .ingest.edf import EdfRecording, EdfSignal, serialize_edf
from .ingest.manifest import DatasetManifest, ManifestEntry
from .numcore import Rng
from .preprocess import Spectrogram, save_spectrogram

HOUR = 3600.0


def two_blob_images(n: int, rng: Rng, size: int = 8) -> np.ndarray:
    """``n x size x size x 1`` images in [-1, 1], each with two jittered blobs."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    centers = np.array([[0.3, 0.3], [0.7, 0.7]]) * (size - 1)
    out = np.empty((n, size, size, 1), dtype=np.float32)
    jitter = rng.uniform((n, 2, 2), -0.6, 0.6)
    width = 0.12 * size
    for i in range(n):
        img = np.zeros((size, size))
        for c in range(2):
            cy, cx = centers[c] + jitter[i, c]
            img += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        out[i, :, :, 0] = np.clip(2.0 * img - 1.0, -1.0, 1.0)
    return out


def toy_image(label: str, rng: Rng, size: int = 32, noise: float = 0.35) -> np.ndarray:
    """Bright top half for preictal, bright bottom half for interictal."""
    img = np.full((size, size), -0.5)
    half = size // 2
    bright = slice(0, half) if label == "preictal" else slice(half, size)
    img[bright] += 0.8 + 0.2 * rng.uniform((1,))[0]
    img += rng.normal((size, size), scale=noise, dtype=np.float64)
    img = np.clip(img, -1.0, 1.0)
    return np.repeat(img[:, :, None], 3, axis=2).astype(np.float32)


def write_toy_spectrograms(
    out_dir,
    seed: int = 0,
    provenance: str = "real",
    patients: int = 3,
    seizures_per_patient: int = 3,
    interictal_per_patient: int = 18,
    size: int = 32,
    timed: bool = True,
    name: str | None = None,
) -> DatasetManifest:
    """Write a labeled spectrogram corpus and its manifest under ``out_dir``.

    With ``timed`` each patient gets a timeline: interictal segments from
    t=0, then seizures two hours apart starting well past the interictal
    block, each preceded by a full hour of preictal segments ending one
    prediction horizon before onset.
    """
    policy = LabelPolicy()
    seg = policy.segment_s
    tiles = int(round(policy.preictal_span_s / seg))
    out_dir = Path(out_dir)
    (out_dir / "spectrograms").mkdir(parents=True, exist_ok=True)
    rng = Rng(seed)
    entries = []
    tag = "r" if provenance == "real" else "s"
    for p in range(patients):
        pid = f"toy{p + 1:02d}"
        prng = rng.child(p)
        items = []
        for i in range(interictal_per_patient):
            items.append(("interictal", i * seg, None, np.nan))
        first_onset = interictal_per_patient * seg + policy.interictal_gap_s + policy.preictal_span_s + policy.sph_s
        for k in range(seizures_per_patient):
            onset = first_onset + k * 2 * HOUR
            start0 = onset - policy.sph_s - policy.preictal_span_s
            for t in range(tiles):
                items.append(("preictal", start0 + t * seg, k, onset))
        for j, (label, start, sz, onset) in enumerate(items):
            sid = f"{pid}_{tag}{seed}_{j:04d}"
            rel = f"spectrograms/{sid}.pfsp"
            save_spectrogram(Spectrogram(toy_image(label, prng, size), label, provenance, sid), out_dir / rel)
            entries.append(
                ManifestEntry(
                    id=sid,
                    path=rel,
                    patient=pid,
                    label=label,
                    provenance=provenance,
                    seizure=sz if timed else None,
                    start_s=start if timed else np.nan,
                    duration_s=seg if timed else np.nan,
                    onset_s=onset if timed else np.nan,
                )
            )
    m = DatasetManifest(name or f"toy-{provenance}", 3, entries, out_dir)
    m.save(out_dir / "manifest.csv")
    return m


def toy_edf_recording(
    patient_id: str,
    duration_s: float,
    seizures: list[SeizureAnnotation],
    rng: Rng,
    sample_rate: int = 128,
    channels: int = 2,
    line_freq: float = 50.0,
    record_s: int = 60,
    sph_s: float = 600.0,
    preictal_span_s: float = HOUR,
) -> EdfRecording:
    """Background noise at a 3 Hz rhythm, a 12 Hz rhythm in each preictal hour,
    line noise everywhere and high-amplitude activity during seizures."""
    n = int(duration_s * sample_rate)
    t = np.arange(n) / sample_rate
    data = []
    for c in range(channels):
        x = 20.0 * rng.normal((n,), dtype=np.float64)
        x += 30.0 * np.sin(2 * np.pi * 3.0 * t + c)
        x += 15.0 * np.sin(2 * np.pi * line_freq * t)
        for sz in seizures:
            pre = (t >= sz.onset_time - sph_s - preictal_span_s) & (t < sz.onset_time)
            x[pre] += 40.0 * np.sin(2 * np.pi * 12.0 * t[pre])
            ictal = (t >= sz.onset_time) & (t < sz.end_time)
            x[ictal] += 150.0 * np.sin(2 * np.pi * 5.0 * t[ictal])
        data.append(x)
    signals = [
        EdfSignal(f"EEG C{c + 1}", sample_rate * record_s, -1000.0, 1000.0, -32767, 32767)
        for c in range(channels)
    ]
    return EdfRecording(patient_id, float(record_s), signals, data, n_records=n // (sample_rate * record_s))


def write_toy_edf(out_dir, seed: int = 0, patients: int = 2, sample_rate: int = 128) -> list[Path]:
    """Write ``<patient>.edf`` and ``<patient>.seizures`` files; returns EDF paths.

    Each recording is 10.75 h long with three leading seizures at 7.5, 9 and
    10.5 h, leaving 3 h of interictal data at least 4 h from any seizure.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = Rng(seed)
    paths = []
    for p in range(patients):
        pid = f"toyedf{p + 1:02d}"
        seizures = [SeizureAnnotation(h * HOUR, h * HOUR + 60.0) for h in (7.5, 9.0, 10.5)]
        rec = toy_edf_recording(pid, 10.75 * HOUR, seizures, rng.child(p), sample_rate)
        path = out_dir / f"{pid}.edf"
        path.write_bytes(serialize_edf(rec))
        (out_dir / f"{pid}.seizures").write_text(format_annotations(seizures))
        paths.append(path)
    return paths
