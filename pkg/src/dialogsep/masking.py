"""Complex spectral masking: element-wise masks, the multi-frame/multi-bin
reference filter, and the residual-refinement combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stft import Spectrogram
from .tensor import Tensor


@dataclass
class ComplexMask:
    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ValueError(f"mask re/im shapes differ: {self.re.shape} vs {self.im.shape}")


def apply_complex_mask(y: Spectrogram, m: ComplexMask) -> Spectrogram:
    """Element-wise complex product, differentiable through the mask."""
    if m.re.shape != y.re.shape:
        raise ValueError(f"mask shape {m.re.shape} does not match spectrogram {y.re.shape}")
    re = m.re * y.re - m.im * y.im
    im = m.re * y.im + m.im * y.re
    return Spectrogram(re, im, frame_hop=y.frame_hop, window_len=y.window_len,
                       sample_rate=y.sample_rate)


def deep_filter(y: Spectrogram, m_pq: np.ndarray,
                p1: int, p2: int, q1: int, q2: int) -> Spectrogram:
    """Reference multi-frame, multi-bin masking.

    out(m, k) = sum_{p=-p1..p2} sum_{q=-q1..q2} M[p, q](m, k) * Y(m-p, k-q)
    with out-of-range neighbors treated as zero. ``m_pq`` has shape
    [p1+p2+1, q1+q2+1, 2, T, K] with channel 0/1 the real/imaginary mask
    parts. Degenerate support (all zeros) reduces to the element-wise mask.
    """
    t, k = y.re.shape
    m_pq = np.asarray(m_pq, dtype=np.float64)
    expected = (p1 + p2 + 1, q1 + q2 + 1, 2, t, k)
    if m_pq.shape != expected:
        raise ValueError(f"filter shape {m_pq.shape}, expected {expected}")
    if p1 + p2 + 1 > t or q1 + q2 + 1 > k:
        raise ValueError("filter support larger than the spectrogram")

    out_re = np.zeros((t, k))
    out_im = np.zeros((t, k))
    for ip, p in enumerate(range(-p1, p2 + 1)):
        for iq, q in enumerate(range(-q1, q2 + 1)):
            sh_re = np.zeros((t, k))
            sh_im = np.zeros((t, k))
            src_t = slice(max(0, -p), t - max(0, p))
            dst_t = slice(max(0, p), t - max(0, -p))
            src_k = slice(max(0, -q), k - max(0, q))
            dst_k = slice(max(0, q), k - max(0, -q))
            sh_re[dst_t, dst_k] = y.re.data[src_t, src_k]
            sh_im[dst_t, dst_k] = y.im.data[src_t, src_k]
            m_re, m_im = m_pq[ip, iq, 0], m_pq[ip, iq, 1]
            # same real-arithmetic form as apply_complex_mask, so degenerate
            # support reproduces it bit for bit
            out_re += m_re * sh_re - m_im * sh_im
            out_im += m_re * sh_im + m_im * sh_re
    return Spectrogram(Tensor(out_re), Tensor(out_im),
                       frame_hop=y.frame_hop, window_len=y.window_len,
                       sample_rate=y.sample_rate)


def combine_residual(s1: Spectrogram, residual: Spectrogram) -> Spectrogram:
    """Element-wise complex addition of the refinement residual."""
    if s1.re.shape != residual.re.shape:
        raise ValueError(f"shape mismatch: {s1.re.shape} vs {residual.re.shape}")
    return Spectrogram(s1.re + residual.re, s1.im + residual.im,
                       frame_hop=s1.frame_hop, window_len=s1.window_len,
                       sample_rate=s1.sample_rate)
