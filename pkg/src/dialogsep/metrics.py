"""Scale-invariant separation metrics (dB) and evaluation reports.

SI-SDR projects the estimate onto the reference before measuring
distortion, so it is invariant to rescaling either signal. SI-SIR uses
sequential projection: target component first, then the interference
component of what remains. Perfect reconstruction is capped at +100 dB
to keep tests deterministic.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .stft import Waveform

CAP_DB = 100.0
_CAP_RATIO = 1e-20


def _samples(x) -> np.ndarray:
    if isinstance(x, Waveform):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def si_sdr(est, ref) -> float:
    """Scale-invariant signal-to-distortion ratio of ``est`` against ``ref``."""
    e, r = _samples(est), _samples(ref)
    if e.shape != r.shape:
        raise ValueError(f"length mismatch: {e.shape} vs {r.shape}")
    r_energy = np.dot(r, r)
    if r_energy == 0.0:
        raise ValueError("reference signal has zero energy")
    alpha = np.dot(e, r) / r_energy
    target = alpha * r
    signal = np.dot(target, target)
    residual = target - e
    noise = np.dot(residual, residual)
    if noise < _CAP_RATIO * signal:
        return CAP_DB
    return float(10.0 * np.log10(signal / noise))


def si_sir(est, ref_speech, ref_background) -> float:
    """Scale-invariant signal-to-interference ratio.

    Projects the estimate on the speech reference, then projects the
    remainder on the background reference.
    """
    e = _samples(est)
    s = _samples(ref_speech)
    v = _samples(ref_background)
    if e.shape != s.shape or e.shape != v.shape:
        raise ValueError("est/speech/background lengths differ")
    s_energy = np.dot(s, s)
    v_energy = np.dot(v, v)
    if s_energy == 0.0 or v_energy == 0.0:
        raise ValueError("reference signal has zero energy")
    e_target = (np.dot(e, s) / s_energy) * s
    rest = e - e_target
    e_interf = (np.dot(rest, v) / v_energy) * v
    target = np.dot(e_target, e_target)
    interf = np.dot(e_interf, e_interf)
    if interf < _CAP_RATIO * target:
        return CAP_DB
    return float(10.0 * np.log10(target / interf))


def snr_db(s, v) -> float:
    """Energy ratio in dB."""
    ss, vv = _samples(s), _samples(v)
    se = np.dot(ss, ss)
    ve = np.dot(vv, vv)
    if se == 0.0 or ve == 0.0:
        raise ValueError("zero-energy signal")
    return float(10.0 * np.log10(se / ve))


@dataclass
class EvalReport:
    """Per-item metric values for one condition, with aggregates.

    Aggregates use the sample standard deviation (ddof=1) when more than
    one item is present.
    """

    metric_names: list[str]
    item_ids: list[str] = field(default_factory=list)
    values: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        for name in self.metric_names:
            self.values.setdefault(name, [])

    def add(self, item_id: str, **metrics: float) -> None:
        self.item_ids.append(item_id)
        for name in self.metric_names:
            self.values[name].append(float(metrics[name]))

    def mean(self, metric: str) -> float:
        return float(np.mean(self.values[metric]))

    def std(self, metric: str) -> float:
        vals = self.values[metric]
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    def to_csv(self, path: str) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id"] + self.metric_names)
            for i, item_id in enumerate(self.item_ids):
                writer.writerow([item_id] + [f"{self.values[m][i]:.6f}" for m in self.metric_names])
            writer.writerow(["mean"] + [f"{self.mean(m):.6f}" for m in self.metric_names])
            writer.writerow(["std"] + [f"{self.std(m):.6f}" for m in self.metric_names])
        os.replace(tmp, path)


def format_results_table(reports: dict[str, EvalReport]) -> str:
    """Plain-text 'mean (± std)' table, one row per condition."""
    metric_names = next(iter(reports.values())).metric_names
    label_w = max(len(label) for label in reports) + 2
    header = " " * label_w + "".join(f"{m:>22}" for m in metric_names)
    lines = [header]
    for label, report in reports.items():
        cells = "".join(
            f"{report.mean(m):>10.2f} (±{report.std(m):6.2f})" for m in metric_names)
        lines.append(f"{label:<{label_w}}" + cells)
    return "\n".join(lines)
