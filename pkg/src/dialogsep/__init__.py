"""Dialogue separation toolkit: complex-mask spectral separation with a
causal local/global network, a from-scratch differentiable tensor core,
SNR-exact mixing, and scale-invariant evaluation metrics."""

from .data import MixSpec, WavIOError, mix_at_snr, read_manifest, read_wav, synth_corpus, write_manifest, write_wav
from .estimator import DialogueSeparator
from .filterbank import FilterbankMatrices, analyze, build_filterbank, synthesize
from .masking import ComplexMask, apply_complex_mask, combine_residual, deep_filter
from .metrics import EvalReport, si_sdr, si_sir, snr_db
from .model import ModelConfig, SeparatorNet, param_breakdown, param_count, separate_waveform
from .stft import Spectrogram, Waveform, istft, pack_complex, stft, unpack_complex
from .tensor import Tensor, grad_check, no_grad
from .training import (AdamState, CheckpointError, TrainConfig, adam_step,
                       load_checkpoint, save_checkpoint, si_sdr_loss, train_loop)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "CheckpointError", "ComplexMask", "DialogueSeparator",
    "EvalReport", "FilterbankMatrices", "MixSpec", "ModelConfig",
    "SeparatorNet", "Spectrogram", "Tensor", "TrainConfig", "Waveform",
    "WavIOError", "adam_step", "analyze", "apply_complex_mask",
    "build_filterbank", "combine_residual", "deep_filter", "grad_check",
    "istft", "load_checkpoint", "mix_at_snr", "no_grad", "pack_complex",
    "param_breakdown", "param_count", "read_manifest", "read_wav",
    "save_checkpoint", "separate_waveform", "si_sdr", "si_sdr_loss",
    "si_sir", "snr_db", "stft", "synth_corpus", "synthesize", "train_loop",
    "unpack_complex", "write_manifest", "write_wav",
]
