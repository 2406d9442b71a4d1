"""Scikit-learn style facade over the separation pipeline.

``DialogueSeparator`` trains on (speech, background) stem pairs (mixtures
are synthesized on the fly at random SNRs) and transforms mixture
waveforms into dialogue estimates, so the model drops into sklearn-style
tooling: constructor args are stored verbatim, ``fit`` returns ``self``,
fitted state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import metrics
from .data import MixSpec, mix_at_snr
from .model import ModelConfig, SeparatorNet, separate_waveform
from .training import TrainConfig, train_loop
from .validation import as_stem_pairs, as_waveform, check_fitted


class DialogueSeparator(BaseEstimator):
    """Trainable dialogue/background separator with fit/transform semantics.

    Parameters mirror the model and trainer configuration; see
    :class:`~dialogsep.model.ModelConfig` and
    :class:`~dialogsep.training.TrainConfig`.
    """

    def __init__(self, channels=64, bands=256, depth=3, bins=1025,
                 nlr_channels=8, sample_rate=48000, lr=0.001, batch_size=4,
                 segment_s=4.0, steps=1000, seed=0, snr_range=(-5.0, 15.0),
                 nlr_enabled=True):
        self.channels = channels
        self.bands = bands
        self.depth = depth
        self.bins = bins
        self.nlr_channels = nlr_channels
        self.sample_rate = sample_rate
        self.lr = lr
        self.batch_size = batch_size
        self.segment_s = segment_s
        self.steps = steps
        self.seed = seed
        self.snr_range = snr_range
        self.nlr_enabled = nlr_enabled

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        model_cfg = ModelConfig(channels=self.channels, bands=self.bands,
                                depth=self.depth, bins=self.bins,
                                nlr_channels=self.nlr_channels,
                                sample_rate=self.sample_rate)
        train_cfg = TrainConfig(lr=self.lr, batch_size=self.batch_size,
                                segment_s=self.segment_s, steps=self.steps,
                                seed=self.seed, snr_range=tuple(self.snr_range),
                                nlr_enabled=self.nlr_enabled)
        return model_cfg, train_cfg

    def fit(self, X, y=None):
        """Train on a sequence of (speech, background) stem pairs."""
        pairs = as_stem_pairs(X, self.sample_rate)
        model_cfg, train_cfg = self._configs()
        self.model_ = SeparatorNet(model_cfg, seed=self.seed)
        self.log_ = train_loop(self.model_, pairs, train_cfg)
        self.n_steps_ = len(self.log_)
        return self

    def transform(self, X):
        """Separate mixture waveform(s); returns arrays matching the input."""
        check_fitted(self)
        single = isinstance(X, np.ndarray) and np.asarray(X).ndim == 1
        items = [X] if single else list(X)
        outputs = []
        for item in items:
            wave = as_waveform(item, self.sample_rate)
            outputs.append(separate_waveform(self.model_, wave,
                                             nlr_enabled=self.nlr_enabled).samples)
        return outputs[0] if single else outputs

    def fit_transform(self, X, y=None):
        """Fit on the stem pairs, then separate their 0 dB mixtures."""
        self.fit(X)
        mixtures = [mix_at_snr(MixSpec(s, b, 0.0))[0].samples
                    for s, b in as_stem_pairs(X, self.sample_rate)]
        return self.transform(mixtures)

    def score(self, X, y=None, snr_db: float = 0.0) -> float:
        """Mean SI-SDR (dB) of the separated dialogue over stem pairs mixed
        at ``snr_db``."""
        check_fitted(self)
        pairs = as_stem_pairs(X, self.sample_rate)
        scores = []
        for speech, background in pairs:
            mixture, _ = mix_at_snr(MixSpec(speech, background, snr_db))
            est = separate_waveform(self.model_, mixture,
                                    nlr_enabled=self.nlr_enabled)
            scores.append(metrics.si_sdr(est.samples, speech.samples[:len(est.samples)]))
        return float(np.mean(scores))
