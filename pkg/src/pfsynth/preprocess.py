"""Line-noise removal and spectrogram construction.

A segment is notch-filtered with a band-stop Butterworth cascade, each
channel is transformed with a non-overlapping rectangular-window STFT, and
the per-channel magnitude maps are stacked along the frequency axis,
log-compressed, resized and normalized into a ``size x size x 3`` image in
[-1, 1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .ingest.segment import LABELS, PROVENANCES, SignalSegment, check_label, check_provenance

IMAGE_SIZE = 256
NOTCH_ORDER = 4
NOTCH_HALF_WIDTH_HZ = 2.0

SPEC_MAGIC = b"PFSP"
SPEC_VERSION = 1


class NyquistError(ValueError):
    pass


class SpectrogramFormatError(ValueError):
    pass


@dataclass
class IirFilter:
    """Cascade of second-order sections, rows ``(b0, b1, b2, a1, a2)`` with a0 = 1."""

    sections: np.ndarray
    sample_rate: float
    kind: str = "bandstop-butterworth"
    order: int = NOTCH_ORDER
    stop_band: tuple[float, float] = (0.0, 0.0)

    def sos(self) -> np.ndarray:
        """scipy-style ``(b0, b1, b2, 1, a1, a2)`` rows."""
        s = self.sections
        return np.column_stack([s[:, :3], np.ones(len(s)), s[:, 3:]])

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots([1.0, a1, a2]) for a1, a2 in self.sections[:, 3:]])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response evaluated on the unit circle."""
        z = np.exp(-2j * np.pi * np.asarray(freqs_hz, dtype=float) / self.sample_rate)
        h = np.ones_like(z)
        for b0, b1, b2, a1, a2 in self.sections:
            h *= (b0 + b1 * z + b2 * z * z) / (1.0 + a1 * z + a2 * z * z)
        return h

    def gain_db(self, freqs_hz) -> np.ndarray:
        return 20.0 * np.log10(np.abs(self.response(freqs_hz)))


def design_notch(sample_rate: float, line_freq: float, half_width: float = NOTCH_HALF_WIDTH_HZ, order: int = NOTCH_ORDER) -> IirFilter:
    """Band-stop Butterworth around ``line_freq`` +/- ``half_width`` Hz."""
    nyq = sample_rate / 2.0
    if not 0.0 < line_freq < nyq:
        raise NyquistError(f"line frequency {line_freq} Hz must lie in (0, {nyq}) for fs={sample_rate} Hz")
    lo, hi = line_freq - half_width, line_freq + half_width
    if lo <= 0.0 or hi >= nyq:
        raise NyquistError(f"stop band [{lo}, {hi}] Hz leaves (0, {nyq})")
    if order % 2:
        raise ValueError("band-stop order must be even")
    sos = sps.butter(order // 2, [lo, hi], btype="bandstop", fs=sample_rate, output="sos")
    sections = np.column_stack([sos[:, :3] / sos[:, 3:4], sos[:, 4:] / sos[:, 3:4]])
    return IirFilter(sections, float(sample_rate), order=order, stop_band=(lo, hi))


def filter_signal(segment: SignalSegment, filt: IirFilter) -> SignalSegment:
    """Causal per-channel application of the cascade; length is preserved."""
    if not np.isclose(segment.sampling_rate, filt.sample_rate):
        raise ValueError(f"segment sampled at {segment.sampling_rate} Hz, filter designed for {filt.sample_rate} Hz")
    out = sps.sosfilt(filt.sos(), segment.samples.astype(np.float64), axis=1)
    return SignalSegment(
        segment.patient_id, out, segment.sampling_rate, segment.label, segment.provenance, segment.start_time
    )


def stft_magnitude(x: np.ndarray, sample_rate: float, window_seconds: float = 60.0, overlap: float = 0.0) -> np.ndarray:
    """``frames x bins`` DFT magnitudes with a rectangular window.

    ``overlap`` is the fraction of a window shared by consecutive frames.
    """
    x = np.asarray(x, dtype=np.float64)
    win = int(round(window_seconds * sample_rate))
    if win <= 0:
        raise ValueError("window must contain at least one sample")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    if len(x) < win:
        raise ValueError(f"signal of {len(x)} samples is shorter than one {win}-sample window")
    hop = max(1, int(round(win * (1.0 - overlap))))
    n_frames = (len(x) - win) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    return np.abs(np.fft.rfft(frames, axis=1))


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a 2-D array with pixel-center-aligned bilinear interpolation."""
    img = np.asarray(img, dtype=np.float64)

    def axis_weights(n_in: int, n_out: int):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    r0, r1, fr = axis_weights(img.shape[0], out_h)
    rows = img[r0] * (1 - fr)[:, None] + img[r1] * fr[:, None]
    c0, c1, fc = axis_weights(img.shape[1], out_w)
    return rows[:, c0] * (1 - fc) + rows[:, c1] * fc


def normalize_to_unit(img: np.ndarray) -> np.ndarray:
    """Affine map of min/max to [-1, 1]; a constant image becomes all -1."""
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        return np.full(img.shape, -1.0)
    return np.clip(2.0 * (img - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def stack_channels(mags: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate per-channel ``frames x bins`` maps into ``(channels*bins) x frames``."""
    shapes = {m.shape for m in mags}
    if len(shapes) != 1:
        raise ValueError(f"channel magnitude maps differ in shape: {sorted(shapes)}")
    return np.vstack([np.asarray(m).T for m in mags])


def assemble_spectrogram(mags: Sequence[np.ndarray], size: int = IMAGE_SIZE) -> np.ndarray:
    """Stack, log-compress, resize, replicate to 3 channels, normalize to [-1, 1]."""
    tall = np.log1p(stack_channels(mags))
    img = normalize_to_unit(bilinear_resize(tall, size, size))
    return np.repeat(img[:, :, None], 3, axis=2).astype(np.float32)


@dataclass
class Spectrogram:
    image: np.ndarray  # H x W x 3, float32 in [-1, 1]
    label: str
    provenance: str = "real"
    source_id: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.image = np.clip(np.asarray(self.image, dtype=np.float32), -1.0, 1.0)
        if self.image.ndim != 3:
            raise ValueError(f"spectrogram image must be H x W x C, got {self.image.shape}")
        check_label(self.label)
        check_provenance(self.provenance)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.image.shape


def segment_to_spectrogram(
    segment: SignalSegment,
    line_freq: float | None = None,
    size: int = IMAGE_SIZE,
    window_seconds: float = 60.0,
    source_id: str = "",
) -> Spectrogram:
    """Full preprocessing chain for one segment."""
    if line_freq is not None:
        segment = filter_signal(segment, design_notch(segment.sampling_rate, line_freq))
    mags = [stft_magnitude(ch, segment.sampling_rate, window_seconds) for ch in segment.samples]
    img = assemble_spectrogram(mags, size)
    return Spectrogram(img, segment.label, segment.provenance, source_id)


# -- PFSP files ---------------------------------------------------------------------

def write_spectrogram(spec: Spectrogram) -> bytes:
    """``b"PFSP"`` u16 version, u32 H, W, C, u8 label, u8 provenance,
    u16 id length + UTF-8 source id, f32 little-endian payload (row-major HWC)."""
    h, w, c = spec.image.shape
    sid = spec.source_id.encode("utf-8")
    head = SPEC_MAGIC + struct.pack(
        "<HIIIBBH", SPEC_VERSION, h, w, c, LABELS.index(spec.label), PROVENANCES.index(spec.provenance), len(sid)
    )
    return head + sid + spec.image.astype("<f4").tobytes()


def read_spectrogram(buf: bytes) -> Spectrogram:
    if buf[:4] != SPEC_MAGIC:
        raise SpectrogramFormatError("not a spectrogram file (bad magic)")
    fmt = "<HIIIBBH"
    try:
        version, h, w, c, label, prov, n = struct.unpack_from(fmt, buf, 4)
    except struct.error:
        raise SpectrogramFormatError("truncated spectrogram header") from None
    if version != SPEC_VERSION:
        raise SpectrogramFormatError(f"spectrogram format version {version}, expected {SPEC_VERSION}")
    pos = 4 + struct.calcsize(fmt)
    sid = buf[pos : pos + n].decode("utf-8")
    pos += n
    if len(buf) != pos + 4 * h * w * c:
        raise SpectrogramFormatError("spectrogram payload length mismatch")
    img = np.frombuffer(buf, dtype="<f4", offset=pos).reshape(h, w, c).astype(np.float32)
    return Spectrogram(img, LABELS[label], PROVENANCES[prov], sid)


def save_spectrogram(spec: Spectrogram, path) -> None:
    Path(path).write_bytes(write_spectrogram(spec))


def load_spectrogram(path) -> Spectrogram:
    return read_spectrogram(Path(path).read_bytes())


def export_png(spec: Spectrogram, path) -> None:
    """Write an 8-bit grayscale rendering for human inspection."""
    from PIL import Image

    gray = np.round((spec.image[:, :, 0] + 1.0) * 127.5).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path)
