"""The separation network: input conv, auditory band mapping, a three-level
causal encoder, a recurrent bottleneck over time, a mirrored decoder, complex
mask estimation, and a small refinement stack on the masked estimate.

Every stage is causal along time. The frequency-recurrent blocks look across
the whole band axis of a single frame; the time-recurrent bottleneck runs
strictly forward. The estimated mask is tanh-bounded per component, so its
complex magnitude never exceeds sqrt(2).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import filterbank as fbank
from .layers import (BatchNorm2d, CausalConv2d, ConvBlock, FreqUpsampleConv2d,
                     GRU, Module)
from .masking import ComplexMask, apply_complex_mask, combine_residual
from .stft import Spectrogram, pack_complex, unpack_complex
from .tensor import Tensor, concat


@dataclass
class ModelConfig:
    channels: int = 64          # feature channels C throughout the network
    bands: int = 256            # auditory bands B
    depth: int = 3              # encoder/decoder levels
    bins: int = 1025            # STFT bins K (window = 2*(K-1))
    nlr_channels: int = 8       # refinement stack width
    sample_rate: int = 48000

    def __post_init__(self):
        if self.channels % 4 != 0:
            raise ValueError("channels must be divisible by 4 (split branches + bidirectional GRU)")
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.bands % (2 ** self.depth) != 0 or self.bands < 2 ** self.depth:
            raise ValueError(f"bands ({self.bands}) must be divisible by 2^depth ({2 ** self.depth})")
        if self.bins < 3:
            raise ValueError("bins must be at least 3")
        if self.nlr_channels < 1:
            raise ValueError("nlr_channels must be positive")

    @property
    def window_len(self) -> int:
        return 2 * (self.bins - 1)

    @property
    def hop(self) -> int:
        return self.window_len // 2

    @property
    def bottleneck_bands(self) -> int:
        return self.bands // (2 ** self.depth)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class InputBlock(Module):
    """Full 3x3 causal conv mapping the packed complex pair to C channels."""

    def __init__(self, channels, rng, dtype):
        super().__init__()
        self.conv = CausalConv2d(2, channels, bias=False, rng=rng, dtype=dtype)
        self.norm = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x):
        return self.norm(self.conv(x)).relu()


class FreqParallelBlock(Module):
    """Two-branch block: a local conv path and a global path whose GRU runs
    along the frequency axis of each frame (bidirectional, channels as
    features). Branch outputs concatenate back to C channels."""

    def __init__(self, channels, rng, dtype):
        super().__init__()
        half = channels // 2
        self.local = ConvBlock(channels, half, rng=rng, dtype=dtype)
        self.global_conv = ConvBlock(channels, half, rng=rng, dtype=dtype)
        self.global_gru = GRU(half, bidirectional=True, rng=rng, dtype=dtype)

    def forward(self, x):
        local = self.local(x)
        g = self.global_conv(x)
        g = self.global_gru(g.transpose(1, 2, 0)).transpose(2, 0, 1)
        return concat([local, g], axis=0)


class TimeParallelBlock(Module):
    """Bottleneck block: local conv path plus a strictly-causal GRU over time
    with the band axis as features, weights shared across channels."""

    def __init__(self, channels, bands, rng, dtype):
        super().__init__()
        half = channels // 2
        self.local = ConvBlock(channels, half, rng=rng, dtype=dtype)
        self.global_conv = ConvBlock(channels, half, rng=rng, dtype=dtype)
        self.global_gru = GRU(bands, bidirectional=False, rng=rng, dtype=dtype)

    def forward(self, x):
        local = self.local(x)
        g = self.global_gru(self.global_conv(x))
        return concat([local, g], axis=0)


class EncoderBlock(Module):
    """Halves the band axis (strided conv), then frequency-parallel block and
    two conv blocks."""

    def __init__(self, channels, rng, dtype):
        super().__init__()
        self.down = ConvBlock(channels, channels, stride_f=2, rng=rng, dtype=dtype)
        self.fparallel = FreqParallelBlock(channels, rng, dtype)
        self.post1 = ConvBlock(channels, channels, rng=rng, dtype=dtype)
        self.post2 = ConvBlock(channels, channels, rng=rng, dtype=dtype)

    def forward(self, x):
        return self.post2(self.post1(self.fparallel(self.down(x))))


class DecoderBlock(Module):
    """Doubles the band axis (transposed conv), then mirrors the encoder."""

    def __init__(self, channels, rng, dtype):
        super().__init__()
        self.up = FreqUpsampleConv2d(channels, bias=False, rng=rng, dtype=dtype)
        self.up_norm = BatchNorm2d(channels, dtype=dtype)
        self.fparallel = FreqParallelBlock(channels, rng, dtype)
        self.post1 = ConvBlock(channels, channels, rng=rng, dtype=dtype)
        self.post2 = ConvBlock(channels, channels, rng=rng, dtype=dtype)

    def forward(self, x):
        x = self.up_norm(self.up(x)).relu()
        return self.post2(self.post1(self.fparallel(x)))


class OutputBlock(Module):
    """Synthesis band mapping back to K bins, then a full conv to the two
    mask components with tanh bounding."""

    def __init__(self, channels, rng, dtype):
        super().__init__()
        self.conv = CausalConv2d(channels, 2, rng=rng, dtype=dtype)

    def forward(self, x, synthesis: Tensor):
        c, t, b = x.shape
        k = synthesis.shape[1]
        x = (x.reshape(c * t, b) @ synthesis).reshape(c, t, k)
        return self.conv(x).tanh()


class RefineStack(Module):
    """Residual correction on the masked estimate: five full 3x3 causal convs
    with BN+ReLU, then a linear conv back to two channels. Receptive field is
    12 past frames by +-6 bins."""

    def __init__(self, width, rng, dtype):
        super().__init__()
        self.head = CausalConv2d(2, width, bias=False, rng=rng, dtype=dtype)
        self.head_norm = BatchNorm2d(width, dtype=dtype)
        self.mid = [CausalConv2d(width, width, bias=False, rng=rng, dtype=dtype)
                    for _ in range(4)]
        self.mid_norms = [BatchNorm2d(width, dtype=dtype) for _ in range(4)]
        self.tail = CausalConv2d(width, 2, rng=rng, dtype=dtype)
        # start as a zero residual: the untrained refiner leaves the masked
        # estimate untouched and contributes no gradient to earlier stages
        self.tail.weight.data[...] = 0.0

    def forward(self, x):
        x = self.head_norm(self.head(x)).relu()
        for conv, norm in zip(self.mid, self.mid_norms):
            x = norm(conv(x)).relu()
        return self.tail(x)


class SeparatorNet(Module):
    """Full pipeline from mixture spectrogram to dialogue estimate and mask."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c = config.channels
        self.input_block = InputBlock(c, rng, dtype)
        self.encoders = [EncoderBlock(c, rng, dtype) for _ in range(config.depth)]
        self.bottleneck = TimeParallelBlock(c, config.bottleneck_bands, rng, dtype)
        self.decoders = [DecoderBlock(c, rng, dtype) for _ in range(config.depth)]
        self.output_block = OutputBlock(c, rng, dtype)
        self.refiner = RefineStack(config.nlr_channels, rng, dtype)

        f_max = min(23000.0, 0.48 * config.sample_rate)
        self.fb = fbank.build_filterbank(bins=config.bins, bands=config.bands,
                                         sample_rate=config.sample_rate,
                                         f_min=50.0, f_max=f_max)
        self._analysis_t = Tensor(self.fb.analysis.T.astype(dtype))
        self._synthesis_t = Tensor(self.fb.synthesis.T.astype(dtype))

    def estimate_mask(self, mixture: Spectrogram) -> Tensor:
        """Mixture spectrogram -> complex mask as a [2, T, K] tensor."""
        if mixture.bins != self.config.bins:
            raise ValueError(f"model expects {self.config.bins} bins, got {mixture.bins}")
        x = pack_complex(self._cast(mixture))
        x = self.input_block(x)
        c, t, k = x.shape
        x = (x.reshape(c * t, k) @ self._analysis_t).reshape(c, t, self.config.bands)
        for enc in self.encoders:
            x = enc(x)
        x = self.bottleneck(x)
        for dec in self.decoders:
            x = dec(x)
        return self.output_block(x, self._synthesis_t)

    def forward(self, mixture: Spectrogram, nlr_enabled: bool = True
                ) -> tuple[Spectrogram, Tensor]:
        """Returns (dialogue estimate, mask). With nlr_enabled=False the
        estimate is exactly the mask-only product."""
        mask = self.estimate_mask(mixture)
        y = self._cast(mixture)
        s1 = apply_complex_mask(y, ComplexMask(mask[0], mask[1]))
        if not nlr_enabled:
            return s1, mask
        residual = self.refiner(pack_complex(s1))
        s_hat = combine_residual(
            s1, unpack_complex(residual, y.frame_hop, y.window_len, y.sample_rate))
        return s_hat, mask

    def _cast(self, s: Spectrogram) -> Spectrogram:
        if s.re.dtype == self.dtype:
            return s
        return Spectrogram(Tensor(s.re.data.astype(self.dtype)),
                           Tensor(s.im.data.astype(self.dtype)),
                           frame_hop=s.frame_hop, window_len=s.window_len,
                           sample_rate=s.sample_rate)

    # -- parameter plumbing -----------------------------------------------------

    def layer_params(self) -> list:
        """(name, Parameter) pairs, lexicographic by name, names unique."""
        pairs = sorted(self.named_parameters(), key=lambda kv: kv[0])
        names = [n for n, _ in pairs]
        if len(set(names)) != len(names):
            raise RuntimeError("duplicate parameter names")
        return pairs

    def layer_buffers(self) -> list:
        return sorted(self.named_buffers(), key=lambda kv: kv[0])


def separate_waveform(model: SeparatorNet, mixture, nlr_enabled: bool = True):
    """Run the full separation pipeline on a mixture waveform (eval mode).

    Output is zero-padded to the input length (the analysis drops any
    partial final frame).
    """
    from .stft import Waveform, istft, stft
    from .tensor import no_grad

    rate = model.config.sample_rate
    if mixture.sample_rate != rate:
        raise ValueError(f"model was configured for {rate} Hz audio, got "
                         f"{mixture.sample_rate} Hz; resampling is out of scope")
    model.eval()
    with no_grad():
        spec = stft(mixture, model.config.window_len, model.config.hop)
        s_hat, _ = model.forward(spec, nlr_enabled=nlr_enabled)
        est = istft(Spectrogram(Tensor(s_hat.re.data.astype(np.float64)),
                                Tensor(s_hat.im.data.astype(np.float64)),
                                frame_hop=s_hat.frame_hop, window_len=s_hat.window_len,
                                sample_rate=s_hat.sample_rate))
    out = np.zeros(len(mixture.samples))
    out[:len(est.samples)] = est.samples
    return Waveform(out, mixture.sample_rate)


def param_count(model: SeparatorNet) -> int:
    return sum(p.size for _, p in model.layer_params())


def param_breakdown(model: SeparatorNet) -> dict[str, int]:
    """Scalar parameter totals per top-level submodule."""
    groups: dict[str, int] = {}
    for name, p in model.layer_params():
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[0] in ("encoders", "decoders") else parts[0]
        groups[key] = groups.get(key, 0) + p.size
    return dict(sorted(groups.items()))
