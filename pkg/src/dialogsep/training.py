"""Training loop: scale-invariant SDR loss on the waveform interior, Adam,
deterministic (seed, step)-derived data schedule, and checkpointing.

The network is unbatched, so ``batch_size`` is realized as gradient
accumulation: each optimizer step averages the loss gradient over that many
freshly mixed items. All per-item randomness (epoch shuffle, SNR draw,
segment position) is a pure function of (seed, epoch, position), which makes
resuming from a checkpoint bit-equivalent to an uninterrupted run.
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .metrics import CAP_DB
from .model import ModelConfig, SeparatorNet
from .stft import Spectrogram, Waveform, istft_tensor, stft
from .tensor import Tensor

_LOSS_CAP_RATIO = 1e-20


@dataclass
class TrainConfig:
    lr: float = 0.001
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 4
    segment_s: float = 4.0
    steps: int = 1000
    seed: int = 0
    snr_range: tuple[float, float] = (-5.0, 15.0)
    nlr_enabled: bool = True
    grad_clip: Optional[float] = None      # off unless set
    lr_decay: Optional[float] = None       # per-step multiplicative factor, off unless set
    checkpoint_every: int = 200

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.snr_range[0] > self.snr_range[1]:
            raise ValueError("snr_range low must not exceed high")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["betas"] = list(self.betas)
        d["snr_range"] = list(self.snr_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        if "snr_range" in d:
            d["snr_range"] = tuple(d["snr_range"])
        return cls(**d)


def si_sdr_loss(s_hat: Spectrogram, s_ref: Waveform) -> Tensor:
    """Negative SI-SDR of the resynthesized estimate, on the interior region
    where overlap-add weights are complete. Differentiable end to end; the
    +100 dB perfect-reconstruction cap returns a constant."""
    win = s_hat.window_len
    wave = istft_tensor(s_hat.re, s_hat.im, win, s_hat.frame_hop)
    n = wave.shape[0]
    if n <= 2 * win:
        raise ValueError("estimate too short for an interior loss region")
    est = wave[win:n - win]
    ref = np.asarray(s_ref.samples[win:n - win], dtype=est.dtype)
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("reference is silent on the loss region")
    r = Tensor(ref)
    alpha = (est * r).sum() * (1.0 / ref_energy)
    target = alpha * r
    signal = (target * target).sum()
    resid = target - est
    noise = (resid * resid).sum()
    if float(noise.data) < _LOSS_CAP_RATIO * float(signal.data):
        return Tensor(np.asarray(-CAP_DB, dtype=est.dtype))
    ln10 = float(np.log(10.0))
    return (noise.log() - signal.log()) * (10.0 / ln10)


# -- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: list, state: AdamState, cfg: TrainConfig,
              lr: Optional[float] = None) -> None:
    """One bias-corrected Adam update over (name, Parameter) pairs."""
    lr = cfg.lr if lr is None else lr
    b1, b2 = cfg.betas
    state.step += 1
    t = state.step
    for name, p in params:
        if p.grad is None:
            raise ValueError(f"parameter {name} has no gradient")
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.data.dtype)


def clip_grad_norm(params: list, max_norm: float) -> float:
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


# -- deterministic data schedule ---------------------------------------------------


def _item_for(corpus_len: int, seed: int, global_index: int) -> tuple[int, np.random.Generator]:
    epoch = global_index // corpus_len
    pos = global_index % corpus_len
    perm = np.random.default_rng([seed, 1 + epoch]).permutation(corpus_len)
    rng = np.random.default_rng([seed, 1 + epoch, pos])
    return int(perm[pos]), rng


def _prepare_item(corpus, cfg: TrainConfig, global_index: int, window_len: int
                  ) -> tuple[Waveform, Waveform]:
    from .data import MixSpec, mix_at_snr

    idx, rng = _item_for(len(corpus), cfg.seed, global_index)
    speech, background = corpus[idx]
    snr = rng.uniform(cfg.snr_range[0], cfg.snr_range[1])
    mixture, _ = mix_at_snr(MixSpec(speech, background, snr))
    seg = int(round(cfg.segment_s * speech.sample_rate))
    n = len(mixture)
    min_len = 3 * window_len
    if n < min_len:
        raise ValueError(f"corpus item of {n} samples is shorter than {min_len} "
                         f"(3 analysis windows)")
    if seg < min_len:
        seg = min_len
    if seg < n:
        start = int(rng.integers(0, n - seg + 1))
        mixture = Waveform(mixture.samples[start:start + seg], mixture.sample_rate)
        speech = Waveform(speech.samples[start:start + seg], speech.sample_rate)
    return mixture, speech


def train_loop(model: SeparatorNet, corpus, cfg: TrainConfig,
               out_dir: Optional[str] = None, log_path: Optional[str] = None,
               start_step: int = 0, opt_state: Optional[AdamState] = None,
               quiet: bool = True) -> list[dict]:
    """Run cfg.steps optimizer steps (resuming from start_step); returns the
    per-step log and writes `step,loss,si_sdr_est,wall_ms` CSV when asked."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    params = [kv for kv in model.layer_params()
              if cfg.nlr_enabled or not kv[0].startswith("refiner.")]
    opt_state = opt_state or AdamState()
    cfg_win = model.config.window_len
    model.train()

    log: list[dict] = []
    log_fh = None
    if log_path is not None:
        exists = os.path.exists(log_path) and start_step > 0
        log_fh = open(log_path, "a" if exists else "w")
        if not exists:
            log_fh.write("step,loss,si_sdr_est,wall_ms\n")
    try:
        for step in range(start_step, cfg.steps):
            t0 = time.perf_counter()
            model.zero_grad()
            losses = []
            for j in range(cfg.batch_size):
                mixture, speech = _prepare_item(
                    corpus, cfg, step * cfg.batch_size + j, cfg_win)
                spec_y = stft(mixture, cfg_win, model.config.hop)
                s_hat, _ = model.forward(spec_y, nlr_enabled=cfg.nlr_enabled)
                loss = si_sdr_loss(s_hat, speech)
                losses.append(float(loss.data))
                if loss.requires_grad:
                    (loss * (1.0 / cfg.batch_size)).backward()
            if cfg.grad_clip is not None:
                clip_grad_norm(params, cfg.grad_clip)
            lr = cfg.lr * (cfg.lr_decay ** step) if cfg.lr_decay is not None else cfg.lr
            adam_step(params, opt_state, cfg, lr=lr)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            mean_loss = float(np.mean(losses))
            record = {"step": step + 1, "loss": mean_loss,
                      "si_sdr_est": -mean_loss, "wall_ms": wall_ms}
            log.append(record)
            if log_fh is not None:
                log_fh.write(f"{record['step']},{record['loss']:.6f},"
                             f"{record['si_sdr_est']:.6f},{record['wall_ms']:.1f}\n")
                log_fh.flush()
            if not quiet:
                print(f"step {record['step']:>6}  loss {record['loss']:+9.3f}  "
                      f"({record['wall_ms']:.0f} ms)")
            if out_dir is not None and (
                    (step + 1) % cfg.checkpoint_every == 0 or step + 1 == cfg.steps):
                save_checkpoint(os.path.join(out_dir, f"checkpoint_step{step + 1}.dsc"),
                                model, opt_state,
                                metadata={"step": step + 1,
                                          "train_config": cfg.to_dict()})
    finally:
        if log_fh is not None:
            log_fh.close()
    return log


# -- checkpoints --------------------------------------------------------------------

_MAGIC = b"DSEPCKPT"
_VERSION = 1


class CheckpointError(Exception):
    """Unreadable, truncated, or mismatched checkpoint."""


def _pack_record(name: str, arr: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    parts = [struct.pack("<H", len(encoded)), encoded,
             struct.pack("<B", arr.ndim),
             struct.pack(f"<{arr.ndim}I", *arr.shape)]
    parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def record(self) -> tuple[str, np.ndarray]:
        (name_len,) = struct.unpack("<H", self.take(2))
        name = self.take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", self.take(1))
        shape = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape)
        return name, data


def save_checkpoint(path: str, model: SeparatorNet,
                    opt_state: Optional[AdamState] = None,
                    metadata: Optional[dict] = None) -> None:
    """Named float32 records for every parameter and buffer, plus optimizer
    moments when given. Atomic write."""
    params = model.layer_params()
    buffers = model.layer_buffers()
    header = {
        "config": model.config.to_dict(),
        "metadata": metadata or {},
        "n_params": len(params),
        "n_buffers": len(buffers),
        "has_optimizer": opt_state is not None,
        "opt_step": opt_state.step if opt_state is not None else 0,
    }
    header_blob = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(header_blob)), header_blob]
    for name, p in params:
        chunks.append(_pack_record(name, p.data))
    for name, b in buffers:
        chunks.append(_pack_record(name, b))
    if opt_state is not None:
        for name, p in params:
            chunks.append(_pack_record(name, opt_state.m.get(name, np.zeros_like(p.data))))
            chunks.append(_pack_record(name, opt_state.v.get(name, np.zeros_like(p.data))))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path: str, dtype=np.float32
                    ) -> tuple[SeparatorNet, Optional[AdamState], dict]:
    """Rebuild the model from the stored config and load every record,
    validating names and shapes in both directions."""
    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _Reader(blob)
    if reader.take(len(_MAGIC)) != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack("<II", reader.take(8))
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(reader.take(header_len).decode("utf-8"))

    model = SeparatorNet(ModelConfig.from_dict(header["config"]), dtype=dtype)
    params = dict(model.layer_params())
    buffers = dict(model.layer_buffers())
    if header["n_params"] != len(params) or header["n_buffers"] != len(buffers):
        raise CheckpointError(
            f"{path}: record counts do not match the configured model")

    seen = set()
    for expected in (params, buffers):
        for _ in range(len(expected)):
            name, data = reader.record()
            if name in seen:
                raise CheckpointError(f"{path}: duplicate record {name!r}")
            seen.add(name)
            target = expected.get(name)
            if target is None:
                raise CheckpointError(f"{path}: unexpected record {name!r}")
            t_arr = target.data if isinstance(target, Tensor) else target
            if tuple(data.shape) != tuple(t_arr.shape):
                raise CheckpointError(
                    f"{path}: shape mismatch for {name!r}: "
                    f"{data.shape} vs {t_arr.shape}")
            t_arr[...] = data.astype(t_arr.dtype)

    opt_state = None
    if header["has_optimizer"]:
        opt_state = AdamState(step=int(header["opt_step"]))
        for name in params:
            m_name, m = reader.record()
            v_name, v = reader.record()
            if m_name != name or v_name != name:
                raise CheckpointError(f"{path}: optimizer records out of order")
            opt_state.m[name] = m.astype(params[name].dtype)
            opt_state.v[name] = v.astype(params[name].dtype)
    if reader.pos != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after final record")
    return model, opt_state, header["metadata"]
