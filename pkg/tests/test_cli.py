"""CLI contracts: subcommands, exit codes, pipeline self-consistency."""

import csv
import os

import numpy as np
import pytest

from dialogsep.cli import main, parse_config_file
from dialogsep.data import read_wav, write_wav
from dialogsep.metrics import si_sdr, snr_db
from dialogsep.model import param_count
from dialogsep.stft import Waveform
from dialogsep.training import load_checkpoint

TINY_CONFIG = """\
# tiny desk-scale run
channels = 8
bands = 16
depth = 2
bins = 33
sample_rate = 8000
steps = 2
batch_size = 1
segment_s = 0.4
snr_low = 0
snr_high = 5
corpus_items = 2
corpus_duration_s = 0.4
corpus_seed = 0
"""


def write_stems(tmp_path, orthogonal=True, n=4000, sr=8000):
    rng = np.random.default_rng(0)
    s = rng.standard_normal(n)
    v = rng.standard_normal(n)
    if orthogonal:
        v = v - (np.dot(v, s) / np.dot(s, s)) * s
    s_path = os.path.join(tmp_path, "speech.wav")
    v_path = os.path.join(tmp_path, "background.wav")
    write_wav(Waveform(s, sr), s_path)
    write_wav(Waveform(v, sr), v_path)
    return s_path, v_path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One tiny CLI training run shared by the inference-side tests."""
    root = str(tmp_path_factory.mktemp("cli_train"))
    cfg = os.path.join(root, "tiny.cfg")
    with open(cfg, "w") as fh:
        fh.write(TINY_CONFIG)
    out_dir = os.path.join(root, "run")
    assert main(["train", "--config", cfg, "--out-dir", out_dir, "--quiet"]) == 0
    ckpt = os.path.join(out_dir, "model_final.dsc")
    assert os.path.exists(ckpt)
    assert os.path.exists(os.path.join(out_dir, "train_log.csv"))
    return ckpt


def test_config_parser_rejects_unknown_key(tmp_path):
    path = os.path.join(tmp_path, "bad.cfg")
    with open(path, "w") as fh:
        fh.write("window_size = 10\n")
    assert main(["train", "--config", path]) == 2


def test_config_parser_values(tmp_path):
    path = os.path.join(tmp_path, "ok.cfg")
    with open(path, "w") as fh:
        fh.write("channels = 8  # comment\nlr = 0.01\nnlr_enabled = false\n")
    values = parse_config_file(path)
    assert values == {"channels": 8, "lr": 0.01, "nlr_enabled": False}


def test_mix_hits_requested_snr(tmp_path):
    s_path, v_path = write_stems(str(tmp_path))
    out = os.path.join(tmp_path, "mix.wav")
    assert main(["mix", "--speech", s_path, "--background", v_path,
                 "--snr", "6.0", "--output", out]) == 0
    s = read_wav(s_path).samples
    y = read_wav(out).samples
    assert abs(snr_db(s, y - s) - 6.0) <= 0.01


def test_mix_with_awgn(tmp_path):
    s_path, v_path = write_stems(str(tmp_path))
    out = os.path.join(tmp_path, "mix.wav")
    assert main(["mix", "--speech", s_path, "--background", v_path, "--snr", "20",
                 "--awgn-snr", "20", "--seed", "3", "--output", out]) == 0
    assert os.path.exists(out)


def test_separate_identity_mask_reconstructs_interior(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.standard_normal(48000)
    in_path = os.path.join(tmp_path, "in.wav")
    write_wav(Waveform(x.astype(np.float32).astype(np.float64), 48000), in_path)
    out_path = os.path.join(tmp_path, "out.wav")
    assert main(["separate", "--input", in_path, "--output", out_path,
                 "--identity-mask"]) == 0
    y = read_wav(out_path).samples
    x_read = read_wav(in_path).samples
    interior = slice(2048, len(x_read) - 2048)
    num = np.linalg.norm(y[interior] - x_read[interior])
    assert num / np.linalg.norm(x_read[interior]) <= 1e-6


def test_separate_with_model(tmp_path, trained):
    s_path, v_path = write_stems(str(tmp_path))
    mix_path = os.path.join(tmp_path, "y.wav")
    main(["mix", "--speech", s_path, "--background", v_path, "--snr", "0",
          "--output", mix_path])
    out_path = os.path.join(tmp_path, "est.wav")
    assert main(["separate", "--model", trained, "--input", mix_path,
                 "--output", out_path]) == 0
    est = read_wav(out_path)
    assert len(est.samples) == 4000
    assert np.all(np.isfinite(est.samples))


def test_separate_requires_model_or_identity(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["separate", "--input", "a.wav", "--output", "b.wav"])
    assert exc.value.code == 2


def test_evaluate_pipeline_self_consistency(tmp_path, trained):
    s_path, v_path = write_stems(str(tmp_path))
    manifest = os.path.join(tmp_path, "manifest.tsv")
    with open(manifest, "w") as fh:
        fh.write(f"item0\t{s_path}\t{v_path}\t0.0\n")
    report = os.path.join(tmp_path, "report.csv")
    assert main(["evaluate", "--model", trained, "--manifest", manifest,
                 "--report", report]) == 0

    rows = {r[0]: r for r in csv.reader(open(report))}
    header = rows["id"]
    idx = header.index("si_sdr_mixture")
    # the mixture-as-estimate row reproduces the mixing SNR (orthogonal stems)
    s = read_wav(s_path).samples
    v = read_wav(v_path).samples
    gain = np.sqrt(np.dot(s, s) / np.dot(v, v))
    expected = si_sdr(s + gain * v, s)
    assert abs(float(rows["item0"][idx]) - expected) <= 0.01
    assert abs(float(rows["mean"][idx]) - float(rows["item0"][idx])) <= 1e-6


def test_info_reports_total_matching_param_count(tmp_path, trained, capsys):
    assert main(["info", "--model", trained]) == 0
    out = capsys.readouterr().out
    model, _, _ = load_checkpoint(trained)
    assert f"{param_count(model)}" in out
    assert "channels = 8" in out
    assert "refiner" in out


def test_train_from_manifest(tmp_path):
    s_path, v_path = write_stems(str(tmp_path), orthogonal=False)
    manifest = os.path.join(tmp_path, "train.tsv")
    with open(manifest, "w") as fh:
        fh.write(f"item0\t{s_path}\t{v_path}\t0.0\n")
    cfg = os.path.join(tmp_path, "m.cfg")
    with open(cfg, "w") as fh:
        fh.write(TINY_CONFIG.replace("corpus_items = 2",
                                     f"manifest = {manifest}"))
    out_dir = os.path.join(tmp_path, "run")
    assert main(["train", "--config", cfg, "--out-dir", out_dir,
                 "--steps", "1", "--quiet"]) == 0
    assert os.path.exists(os.path.join(out_dir, "model_final.dsc"))


def test_runtime_error_exit_code(tmp_path):
    missing = os.path.join(tmp_path, "missing.wav")
    assert main(["separate", "--model", "nope.dsc", "--input", missing,
                 "--output", os.path.join(tmp_path, "o.wav")]) == 1


def test_help_documents_flags(capsys):
    for argv, flags in [
        (["train", "--help"], ["--config", "--no-nlr", "--steps", "--out-dir"]),
        (["separate", "--help"], ["--model", "--input", "--output", "--identity-mask"]),
        (["evaluate", "--help"], ["--model", "--manifest", "--report", "--no-nlr"]),
        (["mix", "--help"], ["--speech", "--background", "--snr", "--awgn-snr", "--seed"]),
        (["info", "--help"], ["--model"]),
    ]:
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for flag in flags:
            assert flag in text, (argv, flag)
