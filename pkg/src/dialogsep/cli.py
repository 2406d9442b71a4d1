"""Command-line entry point: train, separate, evaluate, mix, info.

Config files are plain ``key = value`` text ('#' starts a comment); flags
override file values. Exit codes: 0 success, 1 runtime failure, 2 usage
error. Output files are written atomically, never partially.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as data_mod
from . import metrics
from .model import ModelConfig, SeparatorNet, param_breakdown, param_count, separate_waveform
from .stft import Waveform, istft, stft
from .training import TrainConfig, load_checkpoint, save_checkpoint, train_loop


class UsageError(Exception):
    """Bad flags or config contents (exit code 2)."""


_MODEL_KEYS = {
    "channels": int, "bands": int, "depth": int, "bins": int,
    "nlr_channels": int, "sample_rate": int,
}
_TRAIN_KEYS = {
    "lr": float, "batch_size": int, "segment_s": float, "steps": int,
    "seed": int, "snr_low": float, "snr_high": float,
    "nlr_enabled": lambda s: s.lower() in ("1", "true", "yes"),
    "grad_clip": float, "lr_decay": float, "checkpoint_every": int,
}
_DATA_KEYS = {
    "manifest": str, "corpus_items": int, "corpus_duration_s": float,
    "corpus_seed": int, "out_dir": str,
}


def parse_config_file(path: str) -> dict:
    """key = value lines; keys are validated against the documented set."""
    known = {**_MODEL_KEYS, **_TRAIN_KEYS, **_DATA_KEYS}
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = known[key](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key!r}: {value!r}") from exc
    return values


def _configs_from(values: dict) -> tuple[ModelConfig, TrainConfig]:
    model_kwargs = {k: v for k, v in values.items() if k in _MODEL_KEYS}
    train_kwargs = {k: v for k, v in values.items() if k in _TRAIN_KEYS
                    and k not in ("snr_low", "snr_high")}
    snr_range = (values.get("snr_low", -5.0), values.get("snr_high", 15.0))
    try:
        return (ModelConfig(**model_kwargs),
                TrainConfig(snr_range=snr_range, **train_kwargs))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    values = parse_config_file(args.config)
    model_cfg, train_cfg = _configs_from(values)
    if args.no_nlr:
        train_cfg.nlr_enabled = False
    if args.steps is not None:
        train_cfg.steps = args.steps
    out_dir = args.out_dir or values.get("out_dir", "runs/train")
    os.makedirs(out_dir, exist_ok=True)

    if "manifest" in values:
        entries = data_mod.read_manifest(values["manifest"])
        corpus = [(data_mod.read_wav(s), data_mod.read_wav(b))
                  for _, s, b, _ in entries]
        for stem in (wave for pair in corpus for wave in pair):
            if stem.sample_rate != model_cfg.sample_rate:
                raise ValueError(
                    f"corpus audio is {stem.sample_rate} Hz but the model is "
                    f"configured for {model_cfg.sample_rate} Hz")
    else:
        corpus = data_mod.synth_corpus(values.get("corpus_seed", 0),
                                       values.get("corpus_items", 8),
                                       values.get("corpus_duration_s", 2.0),
                                       sample_rate=model_cfg.sample_rate)

    model = SeparatorNet(model_cfg, seed=train_cfg.seed)
    log = train_loop(model, corpus, train_cfg, out_dir=out_dir,
                     log_path=os.path.join(out_dir, "train_log.csv"),
                     quiet=args.quiet)
    save_checkpoint(os.path.join(out_dir, "model_final.dsc"), model,
                    metadata={"step": train_cfg.steps,
                              "train_config": train_cfg.to_dict()})
    if log:
        print(f"trained {len(log)} steps; final loss {log[-1]['loss']:+.3f} "
              f"(si_sdr {log[-1]['si_sdr_est']:+.3f} dB)")
    print(f"checkpoints in {out_dir}")
    return 0


def cmd_separate(args) -> int:
    mixture = data_mod.read_wav(args.input)
    if args.identity_mask:
        # debug path: force the mask to 1 + 0j, bypassing the network
        spec = stft(mixture)
        est = istft(spec)
        out = np.zeros(len(mixture.samples))
        out[:len(est.samples)] = est.samples
        data_mod.write_wav(Waveform(out, mixture.sample_rate), args.output)
        return 0
    model, _, _ = load_checkpoint(args.model)
    est = separate_waveform(model, mixture, nlr_enabled=not args.no_nlr)
    data_mod.write_wav(est, args.output)
    return 0


def cmd_evaluate(args) -> int:
    model, _, _ = load_checkpoint(args.model)
    entries = data_mod.read_manifest(args.manifest)
    if not entries:
        raise ValueError(f"{args.manifest}: empty manifest")
    est_report = metrics.EvalReport(["si_sdr", "si_sir"])
    mix_report = metrics.EvalReport(["si_sdr", "si_sir"])
    merged = metrics.EvalReport(["si_sdr", "si_sir", "si_sdr_mixture", "si_sir_mixture"])
    for item_id, s_path, b_path, snr in entries:
        speech = data_mod.read_wav(s_path)
        background = data_mod.read_wav(b_path)
        mixture, nonspeech = data_mod.mix_at_snr(
            data_mod.MixSpec(speech, background, snr))
        est = separate_waveform(model, mixture, nlr_enabled=not args.no_nlr)
        n = len(mixture.samples)
        s = speech.samples[:n]
        v = nonspeech.samples
        row = {
            "si_sdr": metrics.si_sdr(est.samples, s),
            "si_sir": metrics.si_sir(est.samples, s, v),
            "si_sdr_mixture": metrics.si_sdr(mixture.samples, s),
            "si_sir_mixture": metrics.si_sir(mixture.samples, s, v),
        }
        est_report.add(item_id, si_sdr=row["si_sdr"], si_sir=row["si_sir"])
        mix_report.add(item_id, si_sdr=row["si_sdr_mixture"], si_sir=row["si_sir_mixture"])
        merged.add(item_id, **row)
    merged.to_csv(args.report)
    print(metrics.format_results_table({"mixture": mix_report, "estimate": est_report}))
    print(f"per-item report written to {args.report}")
    return 0


def cmd_mix(args) -> int:
    speech = data_mod.read_wav(args.speech)
    background = data_mod.read_wav(args.background)
    spec = data_mod.MixSpec(speech, background, args.snr, awgn_snr_db=args.awgn_snr)
    mixture, _ = data_mod.mix_at_snr(spec, rng=np.random.default_rng(args.seed))
    data_mod.write_wav(mixture, args.output)
    return 0


def cmd_info(args) -> int:
    model, opt_state, metadata = load_checkpoint(args.model)
    print("config:")
    for key, value in model.config.to_dict().items():
        print(f"  {key} = {value}")
    print("parameters:")
    breakdown = param_breakdown(model)
    width = max(len(k) for k in breakdown)
    for key, count in breakdown.items():
        print(f"  {key:<{width}}  {count:>10}")
    print(f"  {'total':<{width}}  {param_count(model):>10}")
    if metadata:
        print("metadata:")
        for key, value in metadata.items():
            print(f"  {key} = {value}")
    print(f"optimizer state: {'present' if opt_state is not None else 'absent'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialogsep",
        description="Dialogue separation: training, inference, mixing, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--no-nlr", action="store_true",
                   help="disable the refinement stage (mask-only ablation)")
    p.add_argument("--steps", type=int, default=None, help="override step count")
    p.add_argument("--out-dir", default=None, help="override output directory")
    p.add_argument("--quiet", action="store_true", help="suppress per-step lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="extract dialogue from a mixture WAV")
    p.add_argument("--model", help="checkpoint path")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--no-nlr", action="store_true")
    p.add_argument("--identity-mask", action="store_true",
                   help="debug: force mask to 1+0j (analysis/synthesis only)")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", help="score a model over a mixing manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True,
                   help="lines of id<TAB>speech<TAB>background<TAB>snr_db")
    p.add_argument("--report", required=True, help="per-item CSV output")
    p.add_argument("--no-nlr", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("mix", help="mix speech and background at an exact SNR")
    p.add_argument("--speech", required=True)
    p.add_argument("--background", required=True)
    p.add_argument("--snr", type=float, required=True)
    p.add_argument("--awgn-snr", type=float, default=None,
                   help="optionally add white noise at this SNR vs the mixture")
    p.add_argument("--seed", type=int, default=0, help="white-noise seed")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("info", help="print checkpoint config and parameter counts")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "separate" and not args.identity_mask and args.model is None:
        parser.error("separate requires --model (or --identity-mask)")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
