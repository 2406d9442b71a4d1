"""Analysis/synthesis between waveforms and complex spectrograms.

Analysis uses a periodic Hamming window (0.54 - 0.46 cos) without edge
padding; synthesis is weighted overlap-add with window-square
normalization, so the interior region (one window length in from each
edge) reconstructs exactly and edge frames are left to the caller to
exclude from losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, _node, stack

DEFAULT_WINDOW = 2048
DEFAULT_HOP = 1024


@dataclass
class Waveform:
    """Mono time-domain signal."""

    samples: np.ndarray
    sample_rate: int = 48000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)


@dataclass
class Spectrogram:
    """Complex time-frequency representation as two real [T, K] tensors."""

    re: Tensor
    im: Tensor
    frame_hop: int = DEFAULT_HOP
    window_len: int = DEFAULT_WINDOW
    sample_rate: int = field(default=48000)

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ValueError(f"re/im shapes differ: {self.re.shape} vs {self.im.shape}")
        if self.re.shape[1] != self.window_len // 2 + 1:
            raise ValueError(
                f"bin count {self.re.shape[1]} does not match window {self.window_len}")

    @property
    def frames(self) -> int:
        return self.re.shape[0]

    @property
    def bins(self) -> int:
        return self.re.shape[1]


def hamming_periodic(n: int) -> np.ndarray:
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(x: Waveform, window_len: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> Spectrogram:
    """Frame count T = 1 + floor((N - window)/hop); frame m covers
    samples [m*hop, m*hop + window)."""
    if window_len % 2 != 0:
        raise ValueError("window_len must be even")
    n = len(x.samples)
    if n < window_len:
        raise ValueError(f"signal of {n} samples is shorter than one window ({window_len})")
    frames = 1 + (n - window_len) // hop
    window = hamming_periodic(window_len)
    idx = np.arange(frames)[:, None] * hop + np.arange(window_len)[None, :]
    spec = np.fft.rfft(x.samples[idx] * window, axis=1)
    return Spectrogram(Tensor(np.ascontiguousarray(spec.real)),
                       Tensor(np.ascontiguousarray(spec.imag)),
                       frame_hop=hop, window_len=window_len,
                       sample_rate=x.sample_rate)


def _ola(frames_td: np.ndarray, window: np.ndarray, hop: int) -> tuple[np.ndarray, np.ndarray]:
    t, win = frames_td.shape
    n = (t - 1) * hop + win
    acc = np.zeros(n)
    den = np.zeros(n)
    wsq = window * window
    for m in range(t):
        acc[m * hop:m * hop + win] += window * frames_td[m]
        den[m * hop:m * hop + win] += wsq
    return acc, den


def istft(s: Spectrogram) -> Waveform:
    """Weighted overlap-add inverse; output length (T-1)*hop + window."""
    win = s.window_len
    hop = s.frame_hop
    if s.bins != win // 2 + 1:
        raise ValueError("hop/window mismatch with spectrogram bins")
    frames_td = np.fft.irfft(s.re.data + 1j * s.im.data, n=win, axis=1)
    acc, den = _ola(frames_td, hamming_periodic(win), hop)
    out = np.where(den > 1e-12, acc / np.where(den > 1e-12, den, 1.0), 0.0)
    return Waveform(out, sample_rate=s.sample_rate)


def istft_tensor(re: Tensor, im: Tensor, window_len: int, hop: int) -> Tensor:
    """Differentiable overlap-add inverse (same numbers as :func:`istft`).

    Backward maps the waveform gradient through the window/normalization
    weights and the rfft adjoint of each frame.
    """
    t, k = re.shape
    if k != window_len // 2 + 1:
        raise ValueError("hop/window mismatch with spectrogram bins")
    window = hamming_periodic(window_len)
    frames_td = np.fft.irfft(re.data + 1j * im.data, n=window_len, axis=1)
    acc, den = _ola(frames_td, window, hop)
    safe = np.where(den > 1e-12, den, 1.0)
    out = np.where(den > 1e-12, acc / safe, 0.0)

    scale = np.full(k, 2.0)
    scale[0] = scale[-1] = 1.0
    scale /= window_len

    def backward(g):
        gn = np.where(den > 1e-12, g / safe, 0.0)
        idx = np.arange(t)[:, None] * hop + np.arange(window_len)[None, :]
        gframes = gn[idx] * window
        gspec = np.fft.rfft(gframes, axis=1)
        g_re = (scale * gspec.real).astype(re.dtype)
        g_im = (scale * gspec.imag).astype(im.dtype)
        g_im[:, 0] = 0.0
        g_im[:, -1] = 0.0
        return g_re, g_im

    return _node(out.astype(re.dtype), (re, im), backward)


def pack_complex(s: Spectrogram) -> Tensor:
    """[2, T, K]: channel 0 real, channel 1 imaginary."""
    return stack([s.re, s.im], axis=0)


def unpack_complex(t: Tensor, frame_hop: int, window_len: int,
                   sample_rate: int = 48000) -> Spectrogram:
    if t.ndim != 3 or t.shape[0] != 2:
        raise ValueError(f"expected [2, T, K], got {t.shape}")
    return Spectrogram(t[0], t[1], frame_hop=frame_hop, window_len=window_len,
                       sample_rate=sample_rate)


def interior_slice(n_samples: int, window_len: int) -> slice:
    """Region where overlap-add weights are complete (loss region)."""
    return slice(window_len, n_samples - window_len)
