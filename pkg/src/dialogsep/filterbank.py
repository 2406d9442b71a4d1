"""Auditory band mapping between linear STFT bins and gammatone bands.

Bands are 4th-order gammatone magnitude responses on an ERB-rate grid,
applied as fixed (non-trainable) matrices per channel and frame. Analysis
rows are L1-normalized; synthesis is the transpose rescaled per bin so a
flat band vector maps back to unity on every covered bin.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


def erb_bandwidth(f_hz):
    """Equivalent rectangular bandwidth at a center frequency, in Hz."""
    return 24.7 * (4.37 * np.asarray(f_hz) / 1000.0 + 1.0)


def erb_rate(f_hz):
    return 21.4 * np.log10(4.37 * np.asarray(f_hz) / 1000.0 + 1.0)


def erb_rate_inv(rate):
    return (10.0 ** (np.asarray(rate) / 21.4) - 1.0) * 1000.0 / 4.37


@dataclass
class FilterbankMatrices:
    analysis: np.ndarray       # [B, K], rows sum to 1
    synthesis: np.ndarray      # [K, B]
    centers_hz: np.ndarray     # [B], strictly increasing
    sample_rate: int
    f_min: float
    f_max: float

    @property
    def bands(self) -> int:
        return self.analysis.shape[0]

    @property
    def bins(self) -> int:
        return self.analysis.shape[1]


def build_filterbank(bins: int = 1025, bands: int = 256, sample_rate: int = 48000,
                     f_min: float = 50.0, f_max: float = 23000.0) -> FilterbankMatrices:
    if bands < 2:
        raise ValueError(f"need at least 2 bands, got {bands}")
    if not (0.0 < f_min < f_max <= sample_rate / 2):
        raise ValueError(f"invalid frequency range [{f_min}, {f_max}] at {sample_rate} Hz")
    centers = erb_rate_inv(np.linspace(erb_rate(f_min), erb_rate(f_max), bands))
    fft_len = 2 * (bins - 1)
    freqs = np.arange(bins) * sample_rate / fft_len

    bw = 1.019 * erb_bandwidth(centers)
    # 4th-order gammatone magnitude response per band over the bin grid
    response = (1.0 + ((freqs[None, :] - centers[:, None]) / bw[:, None]) ** 2) ** -2.0
    analysis = response / response.sum(axis=1, keepdims=True)

    bin_weight = analysis.sum(axis=0)
    covered = bin_weight > 1e-8
    synthesis = np.zeros((bins, bands))
    synthesis[covered] = analysis.T[covered] / bin_weight[covered, None]

    return FilterbankMatrices(analysis=analysis, synthesis=synthesis,
                              centers_hz=centers, sample_rate=sample_rate,
                              f_min=f_min, f_max=f_max)


def analyze(x: Tensor, fb: FilterbankMatrices) -> Tensor:
    """[C, T, K] -> [C, T, B], linear per channel and frame."""
    c, t, k = x.shape
    if k != fb.bins:
        raise ValueError(f"expected {fb.bins} bins, got {k}")
    mat = Tensor(fb.analysis.T.astype(x.dtype))
    return (x.reshape(c * t, k) @ mat).reshape(c, t, fb.bands)


def synthesize(x: Tensor, fb: FilterbankMatrices) -> Tensor:
    """[C, T, B] -> [C, T, K]."""
    c, t, b = x.shape
    if b != fb.bands:
        raise ValueError(f"expected {fb.bands} bands, got {b}")
    mat = Tensor(fb.synthesis.T.astype(x.dtype))
    return (x.reshape(c * t, b) @ mat).reshape(c, t, fb.bins)


def dump_analysis_csv(fb: FilterbankMatrices, path: str) -> None:
    """Debug dump of the analysis matrix, one band per row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["center_hz"] + [f"bin_{k}" for k in range(fb.bins)])
        for center, row in zip(fb.centers_hz, fb.analysis):
            writer.writerow([f"{center:.3f}"] + [f"{v:.8e}" for v in row])
