import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal as sps

from pfsynth.ingest import SignalSegment
from pfsynth.preprocess import (
    NyquistError,
    Spectrogram,
    SpectrogramFormatError,
    assemble_spectrogram,
    bilinear_resize,
    design_notch,
    filter_signal,
    read_spectrogram,
    segment_to_spectrogram,
    stack_channels,
    stft_magnitude,
    write_spectrogram,
)


def seg_of(x, rate, label="preictal"):
    return SignalSegment("p", np.atleast_2d(x), rate, label)


def direct_response_db(filt, f):
    """Transfer function from the cascade coefficients, evaluated independently."""
    z = np.exp(1j * 2 * np.pi * f / filt.sample_rate)
    h = 1.0
    for b0, b1, b2, a1, a2 in filt.sections:
        h *= (b0 * z**2 + b1 * z + b2) / (z**2 + a1 * z + a2)
    return 20 * np.log10(abs(h))


# -- notch design --------------------------------------------------------------------

@pytest.mark.parametrize("fs, line", [(256.0, 60.0), (400.0, 50.0), (256.0, 50.0), (512.0, 60.0)])
def test_notch_depth_and_dc(fs, line):
    f = design_notch(fs, line)
    assert direct_response_db(f, line) <= -40.0
    assert abs(direct_response_db(f, 0.0)) <= 0.5
    assert f.gain_db([line])[0] == pytest.approx(direct_response_db(f, line), abs=1e-6)
    assert f.stop_band == (line - 2, line + 2)
    assert f.order == 4 and len(f.sections) == 2


def test_notch_values_frozen():
    # evaluated once from the designed sections via the unit-circle transfer function
    assert direct_response_db(design_notch(256.0, 60.0), 60.0) == pytest.approx(-104.66, abs=0.05)
    assert direct_response_db(design_notch(400.0, 50.0), 50.0) == pytest.approx(-72.2, abs=0.05)


def test_notch_stability_400hz():
    f = design_notch(400.0, 50.0)
    assert f.is_stable()
    assert np.all(np.abs(f.poles()) < 1.0)


@pytest.mark.parametrize("fs, line", [(100.0, 50.0), (100.0, 60.0), (256.0, 0.0), (256.0, -5.0), (100.0, 49.0)])
def test_notch_nyquist(fs, line):
    with pytest.raises(NyquistError):
        design_notch(fs, line)


# -- filtering -----------------------------------------------------------------------

def steady_amplitude(y, rate, skip_s=5.0):
    return np.max(np.abs(y[int(skip_s * rate) :]))


def test_filter_kills_line_sine():
    rate = 256.0
    t = np.arange(int(30 * rate)) / rate
    x = np.sin(2 * np.pi * 60.0 * t)
    y = filter_signal(seg_of(x, rate), design_notch(rate, 60.0)).samples[0]
    assert len(y) == len(x)
    assert 20 * np.log10(steady_amplitude(y, rate) / 1.0) <= -40.0


def test_filter_passes_dc():
    rate = 256.0
    x = np.full(int(30 * rate), 3.0)
    y = filter_signal(seg_of(x, rate), design_notch(rate, 60.0)).samples[0]
    assert abs(20 * np.log10(y[-1] / 3.0)) <= 0.5


def test_filter_matches_reference_direct_form():
    rate = 256.0
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 2000))
    f = design_notch(rate, 60.0)
    got = filter_signal(seg_of(x, rate), f).samples
    # independent cascade of direct-form difference equations
    ref = x.astype(np.float32).astype(np.float64)
    for b0, b1, b2, a1, a2 in f.sections:
        ref = sps.lfilter([b0, b1, b2], [1.0, a1, a2], ref, axis=1)
    np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-5)


def test_filter_linearity():
    rate = 256.0
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(2, 1, 1024)).astype(np.float32)
    f = design_notch(rate, 60.0)
    a, b = 0.5, -2.0  # exact in float32, so the combination adds no rounding of its own
    lhs = filter_signal(seg_of(a * x + b * y, rate), f).samples.astype(np.float64)
    fx = filter_signal(seg_of(x, rate), f).samples.astype(np.float64)
    fy = filter_signal(seg_of(y, rate), f).samples.astype(np.float64)
    # the segment container stores float32, so compare at single-precision resolution
    np.testing.assert_allclose(lhs, a * fx + b * fy, atol=1e-5)


def test_filter_linearity_double_precision():
    f = design_notch(256.0, 60.0)
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(2, 1024))
    run = lambda v: sps.sosfilt(f.sos(), v)
    np.testing.assert_allclose(run(0.3 * x + 1.7 * y), 0.3 * run(x) + 1.7 * run(y), atol=1e-9)


def test_filter_rate_mismatch():
    with pytest.raises(ValueError):
        filter_signal(seg_of(np.zeros(10), 128.0), design_notch(256.0, 60.0))


# -- STFT ----------------------------------------------------------------------------

def test_stft_ten_minute_segment_at_400hz():
    x = np.random.default_rng(0).normal(size=600 * 400)
    m = stft_magnitude(x, 400.0, 60.0)
    assert m.shape == (10, 60 * 400 // 2 + 1)


def test_stft_partial_window_dropped():
    m = stft_magnitude(np.zeros(int(150 * 10)), 10.0, 60.0)
    assert m.shape[0] == 2


def test_stft_constant_signal_energy_in_dc():
    m = stft_magnitude(np.full(1200, 2.0), 10.0, 60.0)
    assert np.all(m[:, 0] == pytest.approx(1200.0 / 2 * 2.0))
    assert np.all(m[:, 1:] <= 1e-9 * m[:, :1])


def test_stft_bin_sine_peak():
    rate, win = 16.0, 60.0
    n = int(rate * win)
    k = 37
    t = np.arange(n) / rate
    x = np.cos(2 * np.pi * k / win * t)
    m = stft_magnitude(x, rate, win)
    assert m.shape[0] == 1
    assert np.argmax(m[0]) == k
    assert m[0, k] == pytest.approx(n / 2, rel=1e-9)


def test_stft_parseval():
    rate, win = 8.0, 60.0
    n = int(rate * win)
    x = np.random.default_rng(3).normal(size=3 * n)
    m = stft_magnitude(x, rate, win)
    for i in range(3):
        frame = x[i * n : (i + 1) * n]
        full = np.abs(np.fft.fft(frame)) ** 2
        # rfft keeps half the spectrum: fold it back before comparing
        twice = m[i] ** 2 * 2
        twice[0] /= 2
        if n % 2 == 0:
            twice[-1] /= 2
        assert twice.sum() == pytest.approx(full.sum(), rel=1e-6)
        assert twice.sum() == pytest.approx(n * np.sum(frame**2), rel=1e-6)


def test_stft_short_signal():
    with pytest.raises(ValueError):
        stft_magnitude(np.zeros(10), 1.0, 60.0)


# -- spectrogram assembly ------------------------------------------------------------

def test_stack_sixteen_channels():
    B = 7
    mags = [np.full((10, B), float(c)) for c in range(16)]
    tall = stack_channels(mags)
    assert tall.shape == (16 * B, 10)
    assert np.all(tall[B * 3 : B * 4] == 3.0)


def test_stack_rejects_mismatch():
    with pytest.raises(ValueError):
        stack_channels([np.zeros((10, 4)), np.zeros((9, 4))])


def test_all_zero_maps_to_minus_one():
    img = assemble_spectrogram([np.zeros((10, 5))] * 2)
    assert img.shape == (256, 256, 3)
    assert np.all(img == -1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 12), st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_assembled_shape_and_range(channels, frames, bins, seed):
    rng = np.random.default_rng(seed)
    mags = [np.abs(rng.normal(size=(frames, bins))) * rng.uniform(0, 1e4) for _ in range(channels)]
    img = assemble_spectrogram(mags)
    assert img.shape == (256, 256, 3)
    assert img.dtype == np.float32
    assert img.min() >= -1.0 and img.max() <= 1.0
    assert np.array_equal(img[:, :, 0], img[:, :, 2])


def test_bilinear_known_values():
    src = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = bilinear_resize(src, 4, 4)
    # half-pixel centers: output coordinate u maps to (u + 0.5)/2 - 0.5 in source units
    expected_row = [0.0, 0.25, 0.75, 1.0]
    np.testing.assert_allclose(out[0], expected_row)
    np.testing.assert_allclose(out[:, 0], [0.0, 0.5, 1.5, 2.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 20), st.integers(2, 20), st.integers(2, 64), st.integers(2, 64))
def test_bilinear_monotone_ramp_no_overshoot(h, w, oh, ow):
    ramp = np.add.outer(np.arange(h) * 3.0, np.arange(w))
    out = bilinear_resize(ramp, oh, ow)
    assert out.min() >= ramp.min() and out.max() <= ramp.max()
    assert np.all(np.diff(out, axis=0) >= -1e-12)
    assert np.all(np.diff(out, axis=1) >= -1e-12)


def test_channel_permutation_moves_bands():
    rng = np.random.default_rng(4)
    frames, bins = 10, 32
    # channel 0 has energy in low bins, channel 1 in high bins
    a = np.zeros((frames, bins)); a[:, :4] = 50 + rng.uniform(size=(frames, 4))
    b = np.zeros((frames, bins)); b[:, -4:] = 50 + rng.uniform(size=(frames, 4))
    fwd = assemble_spectrogram([a, b])[:, :, 0]
    rev = assemble_spectrogram([b, a])[:, :, 0]
    top, bottom = slice(0, 128), slice(128, 256)
    # the bright band of channel 0 sits in the top half when it comes first, the bottom half otherwise
    assert fwd[top][:16].mean() > fwd[top][112:].mean()
    np.testing.assert_allclose(rev[bottom], fwd[top], atol=0.05)
    np.testing.assert_allclose(rev[top], fwd[bottom], atol=0.05)


def test_segment_pipeline_deterministic():
    rate = 64.0
    t = np.arange(int(600 * rate)) / rate
    x = np.stack([np.sin(2 * np.pi * 5 * t), np.cos(2 * np.pi * 11 * t)])
    seg = SignalSegment("p", x, rate, "interictal")
    a = segment_to_spectrogram(seg, line_freq=25.0, source_id="s1")
    b = segment_to_spectrogram(SignalSegment("p", x.copy(), rate, "interictal"), line_freq=25.0, source_id="s1")
    assert a.image.tobytes() == b.image.tobytes()
    assert a.shape == (256, 256, 3)
    assert a.label == "interictal" and a.provenance == "real"


# -- spectrogram files ---------------------------------------------------------------

def test_spectrogram_round_trip():
    img = np.random.default_rng(0).uniform(-1, 1, size=(8, 8, 3)).astype(np.float32)
    s = Spectrogram(img, "preictal", "synthetic", "gen_0001")
    buf = write_spectrogram(s)
    back = read_spectrogram(buf)
    assert write_spectrogram(back) == buf
    assert (back.label, back.provenance, back.source_id) == ("preictal", "synthetic", "gen_0001")


def test_spectrogram_clamps_and_rejects():
    s = Spectrogram(np.full((2, 2, 3), 5.0), "preictal")
    assert s.image.max() == 1.0
    buf = write_spectrogram(s)
    with pytest.raises(SpectrogramFormatError):
        read_spectrogram(buf[:-1])
    with pytest.raises(SpectrogramFormatError):
        read_spectrogram(b"NOPE" + buf[4:])
