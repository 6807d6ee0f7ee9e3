"""Reader and writer for the European Data Format (EDF) container.

Only plain EDF is handled: fixed-width ASCII header, then data records of
16-bit little-endian two's complement samples. Digital values are mapped to
physical units linearly using each signal's physical/digital extrema.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEADER_BYTES = 256
SIGNAL_HEADER_BYTES = 256
VERSION_FIELD = b"0       "

# (name, width) for the fixed part of the header
_MAIN_FIELDS = [
    ("version", 8),
    ("patient_id", 80),
    ("recording_id", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration", 8),
    ("n_signals", 4),
]
# per-signal fields, each stored as n_signals consecutive entries
_SIGNAL_FIELDS = [
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
]


class EdfError(ValueError):
    """Base class for EDF decoding failures."""


class EdfMagicError(EdfError):
    pass


class EdfTruncatedHeaderError(EdfError):
    pass


class EdfTruncatedDataError(EdfError):
    pass


class EdfHeaderFieldError(EdfError):
    pass


@dataclass
class EdfSignal:
    label: str
    samples_per_record: int
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    physical_dimension: str = "uV"
    transducer: str = ""
    prefiltering: str = ""

    @property
    def gain(self) -> float:
        return (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)

    def to_physical(self, digital: np.ndarray) -> np.ndarray:
        return (digital.astype(np.float64) - self.digital_min) * self.gain + self.physical_min

    def to_digital(self, physical: np.ndarray) -> np.ndarray:
        d = np.rint((np.asarray(physical, dtype=np.float64) - self.physical_min) / self.gain + self.digital_min)
        return np.clip(d, self.digital_min, self.digital_max).astype("<i2")


@dataclass
class EdfRecording:
    patient_id: str
    record_duration: float
    signals: list[EdfSignal]
    data: list[np.ndarray]  # physical samples per signal, all records concatenated
    recording_id: str = ""
    start_date: str = "01.01.00"
    start_time: str = "00.00.00"
    n_records: int = 0
    header_bytes: int = field(default=0)

    @property
    def signal_count(self) -> int:
        return len(self.signals)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.signals]

    @property
    def sampling_rates(self) -> list[float]:
        return [s.samples_per_record / self.record_duration for s in self.signals]

    @property
    def duration(self) -> float:
        return self.n_records * self.record_duration

    def record(self, i: int) -> list[np.ndarray]:
        """Sample arrays of data record ``i``, one per signal."""
        return [d[i * s.samples_per_record : (i + 1) * s.samples_per_record] for s, d in zip(self.signals, self.data)]

    def matrix(self) -> np.ndarray:
        """channels x samples array; requires a uniform sampling rate."""
        if len(set(s.samples_per_record for s in self.signals)) != 1:
            raise EdfError("signals have differing sampling rates")
        return np.vstack(self.data)


def _field(buf: bytes, pos: int, width: int) -> str:
    return buf[pos : pos + width].decode("ascii", errors="replace").strip()


def _number(text: str, name: str, kind=float):
    try:
        return kind(text)
    except ValueError:
        if kind is int:
            try:
                val = float(text)
                if val.is_integer():
                    return int(val)
            except ValueError:
                pass
        raise EdfHeaderFieldError(f"header field {name!r} is not numeric: {text!r}") from None


def parse_edf(buf: bytes) -> EdfRecording:
    """Decode an EDF byte string."""
    if len(buf) < HEADER_BYTES:
        raise EdfTruncatedHeaderError(f"file is {len(buf)} bytes, shorter than the {HEADER_BYTES}-byte header")
    if buf[:8] != VERSION_FIELD:
        raise EdfMagicError(f"version field is {buf[:8]!r}, expected {VERSION_FIELD!r}")
    main, pos = {}, 0
    for name, width in _MAIN_FIELDS:
        main[name] = _field(buf, pos, width)
        pos += width
    ns = _number(main["n_signals"], "n_signals", int)
    if ns <= 0:
        raise EdfHeaderFieldError(f"signal count must be positive, got {ns}")
    header_bytes = _number(main["header_bytes"], "header_bytes", int)
    if header_bytes != HEADER_BYTES + SIGNAL_HEADER_BYTES * ns:
        raise EdfHeaderFieldError(f"header_bytes {header_bytes} != 256 + 256 x {ns}")
    if len(buf) < header_bytes:
        raise EdfTruncatedHeaderError(f"signal headers need {header_bytes} bytes, file has {len(buf)}")
    n_records = _number(main["n_records"], "n_records", int)
    duration = _number(main["record_duration"], "record_duration")
    if duration <= 0:
        raise EdfHeaderFieldError(f"record duration must be positive, got {duration}")

    cols: dict[str, list[str]] = {}
    for name, width in _SIGNAL_FIELDS:
        cols[name] = [_field(buf, pos + i * width, width) for i in range(ns)]
        pos += width * ns
    signals = []
    for i in range(ns):
        sig = EdfSignal(
            label=cols["label"][i],
            transducer=cols["transducer"][i],
            physical_dimension=cols["physical_dimension"][i],
            physical_min=_number(cols["physical_min"][i], f"physical_min[{i}]"),
            physical_max=_number(cols["physical_max"][i], f"physical_max[{i}]"),
            digital_min=_number(cols["digital_min"][i], f"digital_min[{i}]", int),
            digital_max=_number(cols["digital_max"][i], f"digital_max[{i}]", int),
            prefiltering=cols["prefiltering"][i],
            samples_per_record=_number(cols["samples_per_record"][i], f"samples_per_record[{i}]", int),
        )
        if sig.digital_max <= sig.digital_min:
            raise EdfHeaderFieldError(f"signal {i}: digital_max must exceed digital_min")
        if sig.physical_max == sig.physical_min:
            raise EdfHeaderFieldError(f"signal {i}: empty physical range")
        if sig.samples_per_record <= 0:
            raise EdfHeaderFieldError(f"signal {i}: samples_per_record must be positive")
        signals.append(sig)

    per_record = sum(s.samples_per_record for s in signals)
    payload = len(buf) - header_bytes
    if n_records == -1:
        if payload % (2 * per_record):
            raise EdfTruncatedDataError("data section is not a whole number of records")
        n_records = payload // (2 * per_record)
    if n_records < 0:
        raise EdfHeaderFieldError(f"invalid record count {n_records}")
    need = n_records * per_record * 2
    if payload < need:
        raise EdfTruncatedDataError(f"{n_records} records need {need} data bytes, file has {payload}")
    if payload > need:
        raise EdfHeaderFieldError(f"record count {n_records} inconsistent with {payload} data bytes")

    raw = np.frombuffer(buf, dtype="<i2", count=n_records * per_record, offset=header_bytes)
    raw = raw.reshape(n_records, per_record)
    data, off = [], 0
    for s in signals:
        data.append(s.to_physical(raw[:, off : off + s.samples_per_record].reshape(-1)))
        off += s.samples_per_record
    return EdfRecording(
        patient_id=main["patient_id"],
        recording_id=main["recording_id"],
        start_date=main["start_date"],
        start_time=main["start_time"],
        record_duration=duration,
        n_records=n_records,
        header_bytes=header_bytes,
        signals=signals,
        data=data,
    )


def read_edf(path) -> EdfRecording:
    return parse_edf(Path(path).read_bytes())


def _ascii(value, width: int) -> bytes:
    text = value if isinstance(value, str) else _fmt_number(value)
    raw = text.encode("ascii")
    if len(raw) > width:
        raise EdfHeaderFieldError(f"value {text!r} does not fit in {width} bytes")
    return raw.ljust(width, b" ")


def _fmt_number(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    text = repr(float(v))
    if text.endswith(".0"):
        text = text[:-2]
    return text[:8]


def serialize_edf(rec: EdfRecording) -> bytes:
    """Encode a recording; physical samples are re-quantized to 16 bits."""
    ns = len(rec.signals)
    for s, d in zip(rec.signals, rec.data):
        if len(d) % s.samples_per_record:
            raise EdfError(f"signal {s.label!r} length {len(d)} is not a multiple of {s.samples_per_record}")
    n_records = len(rec.data[0]) // rec.signals[0].samples_per_record if ns else 0
    main = {
        "version": "0",
        "patient_id": rec.patient_id,
        "recording_id": rec.recording_id,
        "start_date": rec.start_date,
        "start_time": rec.start_time,
        "header_bytes": HEADER_BYTES + SIGNAL_HEADER_BYTES * ns,
        "reserved": "",
        "n_records": n_records,
        "record_duration": rec.record_duration,
        "n_signals": ns,
    }
    parts = [_ascii(main[name], width) for name, width in _MAIN_FIELDS]
    for name, width in _SIGNAL_FIELDS:
        for s in rec.signals:
            parts.append(_ascii("" if name == "reserved" else getattr(s, name), width))
    digital = [s.to_digital(d).reshape(n_records, s.samples_per_record) for s, d in zip(rec.signals, rec.data)]
    parts.append(np.concatenate(digital, axis=1).astype("<i2").tobytes())
    return b"".join(parts)
