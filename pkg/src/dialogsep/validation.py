"""Input validation helpers shared by the estimator facade and the CLI."""

from __future__ import annotations

import numpy as np

from .stft import Waveform


def as_waveform(x, sample_rate: int) -> Waveform:
    """Coerce a 1-D array (or pass through a Waveform) at a known rate."""
    if isinstance(x, Waveform):
        if x.sample_rate != sample_rate:
            raise ValueError(
                f"waveform is {x.sample_rate} Hz but {sample_rate} Hz is required; "
                "resampling is out of scope, provide matching-rate audio")
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a mono 1-D signal, got shape {arr.shape}")
    return Waveform(arr, sample_rate)


def as_stem_pairs(X, sample_rate: int) -> list[tuple[Waveform, Waveform]]:
    """Coerce a sequence of (speech, background) items for fitting."""
    pairs = []
    for i, item in enumerate(X):
        try:
            speech, background = item
        except (TypeError, ValueError) as exc:
            raise ValueError(
                f"item {i}: expected a (speech, background) pair") from exc
        pairs.append((as_waveform(speech, sample_rate),
                      as_waveform(background, sample_rate)))
    if not pairs:
        raise ValueError("need at least one (speech, background) pair")
    return pairs


def check_fitted(estimator, attribute: str = "model_") -> None:
    if not hasattr(estimator, attribute):
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted; call fit() first")
