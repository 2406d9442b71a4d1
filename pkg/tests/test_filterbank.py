"""Band mapping: construction invariants and round-trip bounds."""

import os

import numpy as np
import pytest

from dialogsep.filterbank import (analyze, build_filterbank, dump_analysis_csv,
                                  erb_bandwidth, erb_rate, synthesize)
from dialogsep.tensor import Tensor


@pytest.fixture(scope="module")
def fb():
    return build_filterbank()


def bin_freqs(fb_):
    return np.arange(fb_.bins) * fb_.sample_rate / (2 * (fb_.bins - 1))


def test_shapes(fb):
    assert fb.analysis.shape == (256, 1025)
    assert fb.synthesis.shape == (1025, 256)
    assert fb.centers_hz.shape == (256,)


def test_rows_l1_normalized(fb):
    norms = np.abs(fb.analysis).sum(axis=1)
    assert np.all(np.abs(norms - 1.0) <= 1e-9)


def test_erb_formula_at_1khz():
    assert abs(erb_bandwidth(1000.0) - 24.7 * (4.37 + 1.0)) < 1e-12
    assert abs(erb_bandwidth(1000.0) - 132.639) < 1e-3


def test_centers_strictly_increasing_and_in_range(fb):
    assert np.all(np.diff(fb.centers_hz) > 0)
    assert fb.centers_hz[0] == pytest.approx(50.0, rel=1e-6)
    assert fb.centers_hz[-1] == pytest.approx(23000.0, rel=1e-6)


def test_centers_evenly_spaced_on_erb_rate(fb):
    rates = erb_rate(fb.centers_hz)
    assert np.allclose(np.diff(rates), rates[1] - rates[0], atol=1e-9)


def test_no_orphan_bins_in_range(fb):
    freqs = bin_freqs(fb)
    in_range = (freqs >= fb.f_min) & (freqs <= fb.f_max)
    assert np.all(fb.analysis[:, in_range].max(axis=0) > 0)


def test_unity_band_vector_recovers_unity(fb):
    rt = fb.synthesis @ (fb.analysis @ np.ones(fb.bins))
    freqs = bin_freqs(fb)
    focus = (freqs >= 200.0) & (freqs <= 20000.0)
    assert np.all(rt[focus] >= 0.8) and np.all(rt[focus] <= 1.2)


def test_monotone_band_coverage(fb):
    peaks = fb.analysis.argmax(axis=1)
    assert np.all(np.diff(peaks) >= 0)


def test_invalid_ranges_rejected():
    with pytest.raises(ValueError):
        build_filterbank(f_max=25000.0)  # above Nyquist
    with pytest.raises(ValueError):
        build_filterbank(bands=1)
    with pytest.raises(ValueError):
        build_filterbank(f_min=-1.0)


def test_analyze_zeros_and_shape(fb):
    out = analyze(Tensor(np.zeros((64, 45, 1025))), fb)
    assert out.shape == (64, 45, 256)
    assert np.array_equal(out.data, np.zeros((64, 45, 256)))


def test_analyze_impulse_selects_column(fb):
    x = np.zeros((1, 1, 1025))
    x[0, 0, 400] = 1.0
    out = analyze(Tensor(x), fb)
    assert np.allclose(out.data[0, 0], fb.analysis[:, 400])


def test_analyze_linearity(fb):
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((2, 2, 3, 1025))
    a, b = 2.5, -1.25
    lhs = analyze(Tensor(a * x + b * y), fb).data
    rhs = a * analyze(Tensor(x), fb).data + b * analyze(Tensor(y), fb).data
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_synthesize_zeros_and_shape(fb):
    out = synthesize(Tensor(np.zeros((64, 45, 256))), fb)
    assert out.shape == (64, 45, 1025)
    assert np.array_equal(out.data, np.zeros((64, 45, 1025)))


def test_shape_mismatch_rejected(fb):
    with pytest.raises(ValueError):
        analyze(Tensor(np.zeros((2, 3, 100))), fb)
    with pytest.raises(ValueError):
        synthesize(Tensor(np.zeros((2, 3, 100))), fb)


def test_smooth_spectrum_round_trip_within_1db(fb):
    """100 random pink-like magnitude spectra survive analyze+synthesize
    to <= 1 dB per bin inside [200 Hz, 20 kHz]."""
    rng = np.random.default_rng(0)
    freqs = bin_freqs(fb)
    focus = (freqs >= 200.0) & (freqs <= 20000.0)
    u = (erb_rate(np.maximum(freqs, 1.0)) - erb_rate(fb.f_min))
    u /= erb_rate(fb.f_max) - erb_rate(fb.f_min)
    worst = 0.0
    for _ in range(100):
        curve = np.zeros(fb.bins)
        for j in range(1, 5):
            curve += rng.uniform(0, 0.3) * np.cos(2 * np.pi * j * u + rng.uniform(0, 2 * np.pi))
        s = (np.maximum(freqs, 50.0) / 1000.0) ** -0.5 * np.exp(curve)
        back = synthesize(analyze(Tensor(s[None, None, :]), fb), fb).data[0, 0]
        err_db = np.abs(10.0 * np.log10(back[focus] / s[focus]))
        worst = max(worst, err_db.max())
    assert worst <= 1.0


def test_csv_dump(tmp_path, fb):
    path = os.path.join(tmp_path, "analysis.csv")
    dump_analysis_csv(fb, path)
    with open(path) as fh:
        header = fh.readline().split(",")
    assert header[0] == "center_hz" and len(header) == 1 + fb.bins
