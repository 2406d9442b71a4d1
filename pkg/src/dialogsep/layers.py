"""Layer primitives: causal convolutions, batch norm, and GRUs.

Feature maps are laid out ``[channels, time, frequency]``. Every conv is
causal along time: the 3x3 kernels see two past frames and the current
one, never a future frame. Weight init is uniform fan-in scaling
(+-sqrt(1/fan_in)); GRU biases start at zero.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat, pad, stack

KERNEL = 3  # all spatial kernels are 3x3
PAST_FRAMES = KERNEL - 1  # causal time padding


class Parameter(Tensor):
    """A leaf tensor that optimizers update."""

    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)


class Module:
    """Minimal container with parameter/buffer discovery by attribute walk."""

    def __init__(self):
        self.training = False

    def train(self):
        for m in self.modules():
            m.training = True
        return self

    def eval(self):
        for m in self.modules():
            m.training = False
        return self

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{name}", value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray):
                yield f"{prefix}{name}", value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _freq_out(f: int, stride: int) -> int:
    return f if stride == 1 else -(-f // 2)  # ceil(F/2)


def _causal_pad(x: Tensor) -> Tensor:
    # two past frames, zero future frames; one bin each side in frequency
    return pad(x, ((0, 0), (PAST_FRAMES, 0), (1, 1)))


def _depthwise_apply(xp: Tensor, weight: Tensor, t_len: int, f_out: int, stride: int) -> Tensor:
    out = None
    for dt in range(KERNEL):
        for df in range(KERNEL):
            sl = xp[:, dt:dt + t_len, df:df + stride * (f_out - 1) + 1:stride]
            term = sl * weight[:, dt, df].reshape(-1, 1, 1)
            out = term if out is None else out + term
    return out


def _pointwise_apply(x: Tensor, weight: Tensor, bias) -> Tensor:
    c, t, f = x.shape
    y = weight @ x.reshape(c, t * f)
    y = y.reshape(weight.shape[0], t, f)
    return y if bias is None else y + bias.reshape(-1, 1, 1)


class SeparableCausalConv2d(Module):
    """Depthwise 3x3 causal conv followed by a pointwise channel map.

    stride_f in {1, 2}; stride 2 halves the frequency axis (F' = ceil(F/2)).
    Bias lives on the pointwise stage only.
    """

    def __init__(self, in_channels: int, out_channels: int, stride_f: int = 1,
                 bias: bool = True, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        super().__init__()
        if stride_f not in (1, 2):
            raise ValueError(f"stride_f must be 1 or 2, got {stride_f}")
        rng = rng or np.random.default_rng()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride_f = stride_f
        self.depthwise = Parameter(_uniform(rng, (in_channels, KERNEL, KERNEL), KERNEL * KERNEL, dtype))
        self.pointwise = Parameter(_uniform(rng, (out_channels, in_channels), in_channels, dtype))
        # a conv feeding a batch norm drops its bias (batch-mean subtraction
        # cancels it exactly, leaving a dead parameter)
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise ValueError(f"expected [{self.in_channels}, T, F], got {x.shape}")
        _, t, f = x.shape
        f_out = _freq_out(f, self.stride_f)
        mixed = _depthwise_apply(_causal_pad(x), self.depthwise, t, f_out, self.stride_f)
        return _pointwise_apply(mixed, self.pointwise, self.bias)


class CausalConv2d(Module):
    """Full (channel-mixing) 3x3 causal conv, for the small-channel stages."""

    def __init__(self, in_channels: int, out_channels: int, bias: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng()
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = in_channels * KERNEL * KERNEL
        self.weight = Parameter(_uniform(rng, (out_channels, in_channels, KERNEL, KERNEL), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise ValueError(f"expected [{self.in_channels}, T, F], got {x.shape}")
        c, t, f = x.shape
        xp = _causal_pad(x)
        out = None
        for dt in range(KERNEL):
            for df in range(KERNEL):
                sl = xp[:, dt:dt + t, df:df + f].reshape(c, t * f)
                term = self.weight[:, :, dt, df] @ sl
                out = term if out is None else out + term
        out = out.reshape(self.out_channels, t, f)
        return out if self.bias is None else out + self.bias.reshape(-1, 1, 1)


class FreqUpsampleConv2d(Module):
    """Transposed conv along frequency (stride 2): zero-stuff then 3x3 causal
    depthwise-separable conv. Doubles F exactly, preserves T, stays causal.
    """

    def __init__(self, channels: int, bias: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        self.conv = SeparableCausalConv2d(channels, channels, stride_f=1,
                                          bias=bias, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        from .tensor import dilate_axis
        return self.conv(dilate_axis(x, axis=2, factor=2))


class BatchNorm2d(Module):
    """Per-channel normalization over the time and frequency axes."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.size == 0:
            raise ValueError("batch norm on zero-size input")
        if x.ndim != 3 or x.shape[0] != self.channels:
            raise ValueError(f"expected [{self.channels}, T, F], got {x.shape}")
        g = self.gamma.reshape(-1, 1, 1)
        b = self.beta.reshape(-1, 1, 1)
        if self.training:
            mu = x.mean(axis=(1, 2), keepdims=True)
            xc = x - mu
            var = (xc * xc).mean(axis=(1, 2), keepdims=True)
            y = xc * (var + self.eps) ** -0.5 * g + b
            n = x.shape[1] * x.shape[2]
            unbiased = var.data.reshape(-1) * (n / max(n - 1, 1))
            m = self.momentum
            self.running_mean += m * (mu.data.reshape(-1).astype(self.running_mean.dtype) - self.running_mean)
            self.running_var += m * (unbiased.astype(self.running_var.dtype) - self.running_var)
            return y
        rm = Tensor(self.running_mean.reshape(-1, 1, 1))
        rv = Tensor(self.running_var.reshape(-1, 1, 1))
        return (x - rm) * (rv + self.eps) ** -0.5 * g + b


class ConvBlock(Module):
    """Separable causal conv + BN + ReLU (the repeating conv unit)."""

    def __init__(self, in_channels: int, out_channels: int, stride_f: int = 1,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        self.conv = SeparableCausalConv2d(in_channels, out_channels, stride_f,
                                          bias=False, rng=rng, dtype=dtype)
        self.norm = BatchNorm2d(out_channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(self.conv(x)).relu()


class GRU(Module):
    """Gated recurrent unit over ``[batch, steps, features]`` sequences.

    Output width equals input width: unidirectional uses hidden == features,
    bidirectional uses features/2 per direction and concatenates. Gates
    follow h' = (1 - z) * n + z * h with n = tanh(Wx + r * (Uh)).
    """

    def __init__(self, features: int, bidirectional: bool = False,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng()
        if bidirectional and features % 2 != 0:
            raise ValueError(f"bidirectional GRU needs an even feature size, got {features}")
        self.features = features
        self.bidirectional = bidirectional
        hidden = features // 2 if bidirectional else features
        self.hidden = hidden
        directions = 2 if bidirectional else 1
        for d in range(directions):
            setattr(self, f"w_ih_{d}", Parameter(_uniform(rng, (3 * hidden, features), features, dtype)))
            setattr(self, f"w_hh_{d}", Parameter(_uniform(rng, (3 * hidden, hidden), hidden, dtype)))
            setattr(self, f"b_ih_{d}", Parameter(np.zeros(3 * hidden, dtype=dtype)))
            setattr(self, f"b_hh_{d}", Parameter(np.zeros(3 * hidden, dtype=dtype)))

    def _run_direction(self, x: Tensor, d: int) -> Tensor:
        batch, steps, feat = x.shape
        h = Tensor(np.zeros((batch, self.hidden), dtype=x.dtype))
        w_ih = getattr(self, f"w_ih_{d}")
        w_hh = getattr(self, f"w_hh_{d}")
        b_ih = getattr(self, f"b_ih_{d}")
        b_hh = getattr(self, f"b_hh_{d}")
        # input-side gate preactivations for the whole sequence in one matmul
        gx = (x.reshape(batch * steps, feat) @ w_ih.transpose() + b_ih.reshape(1, -1))
        gx = gx.reshape(batch, steps, 3 * self.hidden)
        hh = self.hidden
        outs = []
        for t in range(steps):
            gxt = gx[:, t, :]
            gh = h @ w_hh.transpose() + b_hh.reshape(1, -1)
            r = (gxt[:, 0:hh] + gh[:, 0:hh]).sigmoid()
            z = (gxt[:, hh:2 * hh] + gh[:, hh:2 * hh]).sigmoid()
            n = (gxt[:, 2 * hh:] + r * gh[:, 2 * hh:]).tanh()
            h = (1.0 - z) * n + z * h
            outs.append(h)
        return stack(outs, axis=1)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[2] != self.features:
            raise ValueError(f"expected [batch, steps, {self.features}], got {x.shape}")
        fwd = self._run_direction(x, 0)
        if not self.bidirectional:
            return fwd
        bwd = self._run_direction(x[:, ::-1, :], 1)[:, ::-1, :]
        return concat([fwd, bwd], axis=2)
