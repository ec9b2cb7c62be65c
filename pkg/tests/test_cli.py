"""Command-line surface: subcommands, exit codes, file formats."""

import glob
import os
import struct
import wave

import numpy as np
import pytest

from artinv.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_OK, load_config_file,
                        main)
from artinv.corpus import (CANONICAL_CHANNELS, EmaTrajectory, read_interchange,
                           read_manifest, write_est_track)

TINY_TRAIN = [
    "--set", "training.iterations=4", "--set", "training.eval_every=2",
    "--set", "inversion.conv_kernels=3", "--set", "inversion.conv_channels=8",
    "--set", "inversion.blstm_hidden=10", "--set", "inversion.n_blstm=1",
    "--set", "inversion.fc_hidden=10", "--set", "inversion.d_speaker=8",
    "--set", "inversion.d_content=6",
    "--set", "decomp.d_speaker=8", "--set", "decomp.d_content=6",
    "--set", "decomp.speaker_channels=8", "--set", "decomp.content_channels=8",
    "--set", "decomp.decoder_channels=8",
    "--set", "pretrain.steps=4", "--set", "pretrain.eval_every=2",
    "--set", "pretrain.batch_size=4",
]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    code = main(["synth", "--out", str(out), "--seed", "0",
                 "--set", "synth.n_speakers=2",
                 "--set", "synth.n_utterances=28"])
    assert code == EXIT_OK
    return out


@pytest.fixture(scope="module")
def run_root(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    code = main(["train", "--corpus", str(corpus_dir), "--scenario", "S1",
                 "--variant", "baseline", "--target-speaker", "SP00",
                 "--out", str(out), "--seed", "0"] + TINY_TRAIN)
    assert code == EXIT_OK
    return out


def run_dir_of(run_root):
    dirs = sorted(glob.glob(os.path.join(str(run_root), "run-*")))
    assert dirs
    return dirs[0]


def test_synth_writes_manifest(corpus_dir):
    man = read_manifest(corpus_dir / "manifest.txt")
    assert len(man.ids()) == 28
    utt = man.load(man.ids()[0])
    assert utt.ema.channels == list(CANONICAL_CHANNELS)


def test_train_writes_run_artifacts(run_root):
    run_dir = run_dir_of(run_root)
    for name in ("config.json", "checkpoint.bin", "report.json", "stats.json",
                 "report.csv"):
        assert os.path.exists(os.path.join(run_dir, name)), name


def test_eval_tabulates_runs(run_root, capsys):
    code = main(["eval", "--out", str(run_root), "--scenario", "S1"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "baseline" in out and "RMSE" in out
    assert os.path.exists(os.path.join(str(run_root), "summary.csv"))


def test_eval_filters_can_exclude_everything(run_root):
    assert main(["eval", "--out", str(run_root), "--scenario", "S4"]) == EXIT_DATA


def test_infer_round_trip(corpus_dir, run_root, tmp_path):
    man = read_manifest(corpus_dir / "manifest.txt")
    entry = man.utterances[0]
    out_path = tmp_path / "pred.utt"
    code = main(["infer", "--run", run_dir_of(run_root),
                 "--input", str(corpus_dir / entry.path),
                 "--output", str(out_path)])
    assert code == EXIT_OK
    pred = read_interchange(out_path)
    assert pred.ema.channels == list(CANONICAL_CHANNELS)
    assert pred.ema.data.shape[1] == 12
    assert np.isfinite(pred.ema.data).all()


def test_plot_emits_figures(run_root, tmp_path):
    code = main(["plot", "--run", run_dir_of(run_root), "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert glob.glob(str(tmp_path / "*.png"))


def test_pretrain_sdn_command(corpus_dir, tmp_path):
    code = main(["pretrain-sdn", "--corpus", str(corpus_dir),
                 "--out", str(tmp_path)] + TINY_TRAIN)
    assert code == EXIT_OK
    dirs = glob.glob(str(tmp_path / "run-*"))
    assert dirs
    assert os.path.exists(os.path.join(dirs[0], "decomp.bin"))
    assert os.path.exists(os.path.join(dirs[0], "stats.json"))


# ---- convert -------------------------------------------------------------


def write_wav(path, audio, rate=16000):
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(rate)
        wav.writeframes((np.clip(audio, -1, 1) * 32767).astype("<i2").tobytes())


@pytest.fixture()
def raw_corpus(tmp_path):
    rng = np.random.default_rng(0)
    raw_names = [f"raw_{c}" for c in CANONICAL_CHANNELS]
    src = tmp_path / "raw"
    src.mkdir()
    for i in range(3):
        n = 100
        data = rng.standard_normal((n, 12)).astype("f4")
        if i == 2:  # unusable: a dropout longer than the repair limit
            data[10:40, 0] = np.nan
        ema = EmaTrajectory(channels=raw_names, rate_hz=100.0, data=data)
        write_est_track(ema, src / f"SPX_u{i}.ema")
        write_wav(src / f"SPX_u{i}.wav", rng.standard_normal(16000) * 0.1)
    cmap = tmp_path / "channels.map"
    cmap.write_text("".join(f"{r} {c}\n" for r, c in
                            zip(raw_names, CANONICAL_CHANNELS)))
    return src, cmap


def test_convert_builds_interchange_corpus(raw_corpus, tmp_path, capsys):
    src, cmap = raw_corpus
    out = tmp_path / "converted"
    code = main(["convert", str(src), "--channel-map", str(cmap),
                 "--name", "demo", "--out", str(out)])
    assert code == EXIT_OK
    printed = capsys.readouterr().out
    assert "dropped" in printed
    man = read_manifest(out / "manifest.txt")
    assert man.name == "demo"
    assert sorted(man.ids()) == ["SPX_u0", "SPX_u1"]  # u2 dropped
    utt = man.load("SPX_u0")
    assert utt.ema.channels == list(CANONICAL_CHANNELS)
    assert len(utt.audio) == 16000


def test_convert_is_repeatable(raw_corpus, tmp_path):
    src, cmap = raw_corpus
    out = tmp_path / "converted"
    for _ in range(2):
        assert main(["convert", str(src), "--channel-map", str(cmap),
                     "--out", str(out)]) == EXIT_OK
    man = read_manifest(out / "manifest.txt")
    assert sorted(man.ids()) == ["SPX_u0", "SPX_u1"]


# ---- exit codes and config handling --------------------------------------


def test_missing_corpus_is_data_error(tmp_path):
    code = main(["train", "--corpus", str(tmp_path / "nope"),
                 "--scenario", "S1", "--variant", "baseline",
                 "--out", str(tmp_path)])
    assert code == EXIT_DATA


def test_bad_config_value_is_config_error(corpus_dir, tmp_path):
    code = main(["train", "--corpus", str(corpus_dir), "--scenario", "S1",
                 "--variant", "baseline", "--target-speaker", "SP00",
                 "--out", str(tmp_path),
                 "--set", "training.iterations=soon"])
    assert code == EXIT_CONFIG


def test_s4_without_target_is_data_error(corpus_dir, tmp_path):
    code = main(["train", "--corpus", str(corpus_dir), "--scenario", "S4",
                 "--variant", "baseline", "--out", str(tmp_path)] + TINY_TRAIN)
    assert code == EXIT_DATA


def test_convert_empty_directory_is_data_error(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["convert", str(empty), "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ntraining.iterations 7\n"
                   "inversion.blstm_hidden=32\n\n")
    flat = load_config_file(cfg)
    assert flat == {"training.iterations": "7", "inversion.blstm_hidden": "32"}
