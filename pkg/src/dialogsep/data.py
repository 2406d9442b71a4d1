"""WAV I/O, SNR-exact mixing, and the synthetic desk-scale corpus.

Mixing scales the background so the speech-to-background energy ratio
hits the requested SNR exactly; an optional white-noise stage is added
at a given SNR relative to the mixture. The synthetic corpus provides
speech-like and background-like stems that are deterministic in
(seed, item index), so parallel generation stays reproducible.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.io import wavfile

from .stft import Waveform


class WavIOError(Exception):
    """Unreadable or unsupported WAV content."""


@dataclass
class MixSpec:
    """A (speech, background, target SNR) recipe; stems are trimmed to the
    shorter length and must share a sample rate."""

    speech: Waveform
    background: Waveform
    snr_db: float
    awgn_snr_db: Optional[float] = None

    def __post_init__(self):
        if self.speech.sample_rate != self.background.sample_rate:
            raise ValueError(
                f"sample rates differ: speech {self.speech.sample_rate} Hz, "
                f"background {self.background.sample_rate} Hz")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        n = min(len(self.speech), len(self.background))
        if len(self.speech) != n:
            self.speech = Waveform(self.speech.samples[:n], self.speech.sample_rate)
        if len(self.background) != n:
            self.background = Waveform(self.background.samples[:n], self.background.sample_rate)


def mix_at_snr(spec: MixSpec, rng: Optional[np.random.Generator] = None
               ) -> tuple[Waveform, Waveform]:
    """Mix per the recipe; returns (mixture, non-speech content).

    The second return value is mixture - speech (the scaled background
    plus any added white noise), so interference metrics have an exact
    reference.
    """
    s = spec.speech.samples
    v = spec.background.samples
    s_energy = np.dot(s, s)
    v_energy = np.dot(v, v)
    if s_energy == 0.0 or v_energy == 0.0:
        raise ValueError("zero-energy stem in mix recipe")
    gain = np.sqrt(s_energy / v_energy * 10.0 ** (-spec.snr_db / 10.0))
    mixture = s + gain * v
    if spec.awgn_snr_db is not None:
        rng = rng if rng is not None else np.random.default_rng(0)
        noise = rng.standard_normal(len(mixture))
        g_n = np.sqrt(np.dot(mixture, mixture) / np.dot(noise, noise)
                      * 10.0 ** (-spec.awgn_snr_db / 10.0))
        mixture = mixture + g_n * noise
    sr = spec.speech.sample_rate
    return Waveform(mixture, sr), Waveform(mixture - s, sr)


# -- synthetic corpus --------------------------------------------------------


def _formant_envelope(freqs: np.ndarray) -> np.ndarray:
    def bump(center, width):
        return np.exp(-((freqs - center) ** 2) / (2.0 * width ** 2))
    rolloff = 1.0 / (1.0 + (freqs / 3500.0) ** 2)
    return rolloff * (0.25 + bump(500.0, 120.0) + 0.7 * bump(1150.0, 180.0)
                      + 0.5 * bump(2500.0, 250.0))


def _speech_like(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    base = rng.uniform(100.0, 220.0)
    vibrato = 1.0 + 0.08 * np.sin(2.0 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    drift = 1.0 + 0.15 * np.sin(2.0 * np.pi * rng.uniform(0.3, 0.8) * t + rng.uniform(0, 2 * np.pi))
    f0 = np.clip(base * vibrato * drift, 80.0, 300.0)
    phase = 2.0 * np.pi * np.cumsum(f0) / sr

    n_harm = max(3, int((0.45 * sr) / np.max(f0)))
    n_harm = min(n_harm, 40)
    amps = _formant_envelope(np.arange(1, n_harm + 1) * np.mean(f0))
    x = np.zeros(n)
    for h in range(1, n_harm + 1):
        x += amps[h - 1] * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    # syllabic amplitude modulation with occasional gaps
    syl_rate = rng.uniform(2.5, 4.5)
    syllables = (0.5 * (1.0 + np.sin(2.0 * np.pi * syl_rate * t + rng.uniform(0, 2 * np.pi)))) ** 1.5
    x *= 0.05 + 0.95 * syllables
    ramp = min(n // 20, int(0.01 * sr)) or 1
    x[:ramp] *= np.linspace(0.0, 1.0, ramp)
    x[-ramp:] *= np.linspace(1.0, 0.0, ramp)
    return 0.1 * x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


def _background_like(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    # spectrally tilted noise with burst-like amplitude modulation
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.maximum(np.fft.rfftfreq(n, 1.0 / sr), 1.0)
    spec *= freqs ** -rng.uniform(0.3, 1.0)
    noise = np.fft.irfft(spec, n=n)
    mod = rng.standard_normal(n)
    kernel = np.ones(max(1, sr // 8)) / max(1, sr // 8)
    mod = np.convolve(mod, kernel, mode="same")
    mod = 0.4 + 0.6 * (mod - mod.min()) / (np.ptp(mod) + 1e-12)
    x = noise * mod

    t = np.arange(n) / sr
    for _ in range(rng.integers(1, 4)):
        freq = np.exp(rng.uniform(np.log(100.0), np.log(min(8000.0, 0.45 * sr))))
        am = 0.5 * (1.0 + np.sin(2.0 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi)))
        x += 0.3 * np.std(x) * am * np.sin(2.0 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    return 0.1 * x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


def synth_corpus(seed: int, n_items: int, duration_s: float,
                 sample_rate: int = 48000) -> list[tuple[Waveform, Waveform]]:
    """Deterministic (speech, background) stem pairs."""
    if duration_s < 0.25:
        raise ValueError(f"duration must be at least 0.25 s, got {duration_s}")
    n = int(round(duration_s * sample_rate))
    pairs = []
    for i in range(n_items):
        rng_s = np.random.default_rng([seed, i, 0])
        rng_b = np.random.default_rng([seed, i, 1])
        pairs.append((Waveform(_speech_like(rng_s, n, sample_rate), sample_rate),
                      Waveform(_background_like(rng_b, n, sample_rate), sample_rate)))
    return pairs


# -- WAV files ----------------------------------------------------------------


def read_wav(path: str) -> Waveform:
    """Read PCM16 or float WAV; multi-channel files keep the first channel.

    PCM16 is scaled by 1/32768 so -32768 maps to -1.0.
    """
    try:
        sr, data = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise WavIOError(f"{path}: malformed or unsupported WAV file ({exc})") from exc
    if data.ndim == 2:
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise WavIOError(
            f"{path}: unsupported sample format {data.dtype}; use PCM16 or float32")
    return Waveform(samples, int(sr))


def write_wav(wave: Waveform, path: str, fmt: str = "float32") -> None:
    """Write atomically (temp file + rename); fmt is 'float32' or 'pcm16'."""
    if fmt == "float32":
        data = wave.samples.astype(np.float32)
    elif fmt == "pcm16":
        data = np.clip(np.round(wave.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    tmp = f"{path}.tmp"
    wavfile.write(tmp, wave.sample_rate, data)
    os.replace(tmp, path)


# -- corpus manifest -----------------------------------------------------------


def write_manifest(path: str, entries: list[tuple[str, str, str, float]]) -> None:
    """Lines of `id<TAB>speech_path<TAB>background_path<TAB>snr_db`."""
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        for item_id, speech_path, background_path, snr in entries:
            fh.write(f"{item_id}\t{speech_path}\t{background_path}\t{snr}\n")
    os.replace(tmp, path)


def read_manifest(path: str) -> list[tuple[str, str, str, float]]:
    entries = []
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            item_id, s_path, b_path, snr = parts
            if not os.path.isabs(s_path):
                s_path = os.path.join(base, s_path)
            if not os.path.isabs(b_path):
                b_path = os.path.join(base, b_path)
            entries.append((item_id, s_path, b_path, float(snr)))
    return entries
