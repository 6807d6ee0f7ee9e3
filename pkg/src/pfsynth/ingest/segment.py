"""Labeled signal windows and their binary container ("PFSG").

Layout (little-endian)::

    b"PFSG"  u16 version  u16 id_len  patient id (UTF-8)
    f64 sampling_rate  u32 channels  u32 samples_per_channel  f64 start_time
    u8 label  u8 provenance
    f32 samples, channel-major
    u32 CRC32 of every preceding byte

``start_time`` is NaN when a segment has no place on a recording timeline
(synthetic data).
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"PFSG"
VERSION = 1

LABELS = ("interictal", "preictal")
PROVENANCES = ("real", "synthetic")


class SegmentFormatError(ValueError):
    pass


class SegmentVersionError(SegmentFormatError):
    pass


class SegmentChecksumError(SegmentFormatError):
    pass


def check_label(label: str) -> str:
    if label not in LABELS:
        raise ValueError(f"label must be one of {LABELS}, got {label!r}")
    return label


def check_provenance(provenance: str) -> str:
    if provenance not in PROVENANCES:
        raise ValueError(f"provenance must be one of {PROVENANCES}, got {provenance!r}")
    return provenance


@dataclass
class SignalSegment:
    patient_id: str
    samples: np.ndarray  # channels x samples, float32
    sampling_rate: float
    label: str
    provenance: str = "real"
    start_time: float = math.nan

    def __post_init__(self):
        self.samples = np.ascontiguousarray(np.atleast_2d(self.samples), dtype=np.float32)
        check_label(self.label)
        check_provenance(self.provenance)
        if self.sampling_rate <= 0:
            raise ValueError("sampling rate must be positive")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sampling_rate

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration


def write_segment(seg: SignalSegment) -> bytes:
    pid = seg.patient_id.encode("utf-8")
    head = MAGIC + struct.pack("<HH", VERSION, len(pid)) + pid
    head += struct.pack(
        "<dIIdBB",
        float(seg.sampling_rate),
        seg.channels,
        seg.n_samples,
        float(seg.start_time),
        LABELS.index(seg.label),
        PROVENANCES.index(seg.provenance),
    )
    body = head + seg.samples.astype("<f4").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def read_segment(buf: bytes) -> SignalSegment:
    if buf[:4] != MAGIC:
        raise SegmentFormatError("not a segment file (bad magic)")
    if len(buf) < 12:
        raise SegmentFormatError("truncated segment header")
    version, id_len = struct.unpack_from("<HH", buf, 4)
    if version != VERSION:
        raise SegmentVersionError(f"segment format version {version}, expected {VERSION}")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise SegmentChecksumError("segment checksum mismatch")
    pos = 8
    pid = buf[pos : pos + id_len].decode("utf-8")
    pos += id_len
    rate, channels, n, start, label, prov = struct.unpack_from("<dIIdBB", buf, pos)
    pos += struct.calcsize("<dIIdBB")
    expected = pos + 4 * channels * n + 4
    if expected != len(buf):
        raise SegmentFormatError(f"payload length mismatch: expected {expected} bytes, got {len(buf)}")
    samples = np.frombuffer(buf, dtype="<f4", count=channels * n, offset=pos).reshape(channels, n)
    return SignalSegment(pid, samples.astype(np.float32), rate, LABELS[label], PROVENANCES[prov], start)


def save_segment(seg: SignalSegment, path) -> None:
    Path(path).write_bytes(write_segment(seg))


def load_segment(path) -> SignalSegment:
    return read_segment(Path(path).read_bytes())
