"""Command-line entry point tying the pipeline together for batch use.

Subcommands: convert, synth, pretrain-sdn, train, finetune, eval, infer,
plot, gradcheck. Config values come from an optional key-value file
(``--config``) with ``--set key=value`` overrides; CLI > file > defaults.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

import argparse
import dataclasses
import datetime
import json
import logging
import os
import sys
import wave

import numpy as np

from . import corpus as C
from . import decomp as D
from . import evaluate as E
from . import frontend as F
from . import training as T
from .inversion import InversionConfig, VARIANTS, get_variant
from .nn.autodiff import Tensor
from .training import InversionModel

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(Exception):
    pass


# ---- config plumbing -----------------------------------------------------

def load_config_file(path):
    flat = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(None, 1) if "=" not in line else \
                [p.strip() for p in line.split("=", 1)]
            if len(parts) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 'key value'")
            flat[parts[0]] = parts[1]
    return flat


def merged_config(args):
    flat = {}
    if getattr(args, "config", None):
        flat.update(load_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, value = item.split("=", 1)
        flat[key.strip()] = value.strip()
    return flat


def _coerce(value, ftype):
    if ftype is bool or ftype == "bool":
        return value.lower() in ("1", "true", "yes", "on")
    if ftype is tuple:
        return tuple(int(v) for v in value.replace(",", " ").split())
    try:
        return ftype(value)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot parse {value!r} as {ftype}")


def section(dc_cls, flat, prefix, **extra):
    kwargs = dict(extra)
    for f in dataclasses.fields(dc_cls):
        key = f"{prefix}.{f.name}"
        if key in flat:
            ftype = type(getattr(dc_cls(), f.name))
            kwargs[f.name] = _coerce(flat[key], ftype)
    try:
        return dc_cls(**kwargs)
    except Exception as exc:
        raise ConfigError(f"bad {prefix} config: {exc}")


def fresh_run_dir(root, tag):
    os.makedirs(root, exist_ok=True)
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    base = os.path.join(root, f"run-{stamp}-{tag}")
    path, n = base, 0
    while os.path.exists(path):
        n += 1
        path = f"{base}.{n}"
    os.makedirs(path)
    return path


def _save_stats(dataset, path):
    def pack(stats):
        return {"mean": stats.mean.tolist(), "std": stats.std.tolist(),
                "scope": stats.scope}
    blob = {"acoustic": pack(dataset.acoustic_stats),
            "ema_global": pack(dataset.ema_stats_global),
            "ema_speakers": {s: pack(v) for s, v in dataset.ema_stats.items()}}
    with open(path, "w") as fh:
        json.dump(blob, fh)


def _load_stats(path):
    with open(path) as fh:
        blob = json.load(fh)

    def unpack(d):
        return F.NormalizationStats(mean=np.array(d["mean"]),
                                    std=np.array(d["std"]), scope=d["scope"])
    return (unpack(blob["acoustic"]), unpack(blob["ema_global"]),
            {s: unpack(v) for s, v in blob["ema_speakers"].items()})


# ---- subcommands ---------------------------------------------------------

def cmd_convert(args):
    flat = merged_config(args)
    name_map = {}
    if args.channel_map:
        for key, value in load_config_file(args.channel_map).items():
            name_map[key] = value
    in_dir = args.input
    tracks = sorted(f for f in os.listdir(in_dir) if f.endswith(".ema"))
    if not tracks:
        raise C.CorpusError(
            f"no EST track files (*.ema) in {in_dir}; expected per-utterance "
            "<id>.ema plus <id>.wav")
    os.makedirs(args.out, exist_ok=True)
    entries = []
    for fname in tracks:
        utt_id = fname[:-4]
        status = "ok"
        try:
            with open(os.path.join(in_dir, fname), "rb") as fh:
                ema = C.parse_est_track(fh.read())
            ema = C.apply_channel_map(ema, name_map)
            ema = C.clean_trajectory(ema)
            wav_path = os.path.join(in_dir, utt_id + ".wav")
            with wave.open(wav_path, "rb") as wav:
                rate = wav.getframerate()
                raw = wav.readframes(wav.getnframes())
            audio = (np.frombuffer(raw, dtype="<i2").astype(np.float32)
                     / 32768.0)
            speaker = utt_id.split("_")[0]
            utt = C.Utterance(id=utt_id, speaker_id=speaker, audio=audio,
                              audio_rate_hz=float(rate), ema=ema)
            rel = f"{utt_id}.utt"
            C.write_interchange(utt, os.path.join(args.out, rel))
            entries.append(C.ManifestEntry(utt_id, speaker, rel))
        except C.DropUtterance as exc:
            status = f"dropped ({exc})"
        print(f"{utt_id}: {status}")
    if not entries:
        raise C.CorpusError("all utterances failed conversion")
    speakers = sorted({e.speaker_id for e in entries})
    manifest = C.CorpusManifest(name=args.name or flat.get("corpus.name", "corpus"),
                                speakers=speakers, utterances=entries,
                                root=args.out)
    C.write_manifest(manifest, os.path.join(args.out, "manifest.txt"))
    print(f"manifest: {len(entries)} utterances, {len(speakers)} speakers")
    return EXIT_OK


def cmd_synth(args):
    flat = merged_config(args)
    cfg = section(C.SynthConfig, flat, "synth")
    manifest = C.synth_corpus(cfg, args.seed)
    C.save_corpus(manifest, args.out)
    print(f"wrote {len(manifest.utterances)} utterances "
          f"({len(manifest.speakers)} speakers) to {args.out}")
    return EXIT_OK


def cmd_pretrain_sdn(args):
    flat = merged_config(args)
    manifest = C.read_manifest(os.path.join(args.corpus, "manifest.txt"))
    mfcc_cfg = section(F.MfccConfig, flat, "mfcc")
    model_cfg = section(D.DecompConfig, flat, "decomp")
    train_cfg = section(D.PretrainConfig, flat, "pretrain")
    dataset = T.Dataset(manifest, manifest.ids(), mfcc_config=mfcc_cfg)
    dataset.fit_stats(manifest.ids(), split_tag="pretrain")
    model, _ = T.pretrain_decomposer(dataset, manifest.ids(),
                                     model_config=model_cfg,
                                     train_config=train_cfg, seed=args.seed)
    run_dir = fresh_run_dir(args.out, "pretrain")
    D.save_decomposer(model, os.path.join(run_dir, "decomp.bin"), seed=args.seed)
    _save_stats(dataset, os.path.join(run_dir, "stats.json"))
    print(f"decomposition checkpoint: {os.path.join(run_dir, 'decomp.bin')}")
    return EXIT_OK


def _scenario_from_args(args, manifest):
    if args.scenario not in C.SCENARIOS:
        raise ConfigError(f"--scenario must be one of {C.SCENARIOS}")
    return C.ScenarioSpec(kind=args.scenario, dataset=manifest.name,
                          seed=args.seed, target_speaker=args.target_speaker)


def cmd_train(args):
    flat = merged_config(args)
    manifest = C.read_manifest(os.path.join(args.corpus, "manifest.txt"))
    scenario = _scenario_from_args(args, manifest)
    variant = get_variant(args.variant)
    train_cfg = section(T.TrainConfig, flat, "training")
    inv_cfg = section(InversionConfig, flat, "inversion",
                      alpha=train_cfg.alpha, beta=train_cfg.beta)
    mfcc_cfg = section(F.MfccConfig, flat, "mfcc")
    decomp_cfg = section(D.DecompConfig, flat, "decomp")
    pre_cfg = section(D.PretrainConfig, flat, "pretrain")
    decomposer = D.load_decomposer(args.decomp) if args.decomp else None
    run_dir = fresh_run_dir(args.out, f"{scenario.kind}-{variant.name}")
    report = T.run_scenario(manifest, scenario, variant, train_cfg,
                            inv_config=inv_cfg, decomp_config=decomp_cfg,
                            pretrain_config=pre_cfg, decomposer=decomposer,
                            mfcc_config=mfcc_cfg, run_dir=run_dir)
    splits = C.make_splits(manifest, scenario)
    all_ids = splits.train + splits.validation + splits.fine_tune + splits.test
    dataset = T.Dataset(manifest, all_ids, mfcc_config=mfcc_cfg)
    dataset.fit_stats(splits.train)
    if scenario.kind == "S3":
        dataset.add_speaker_stats(splits.fine_tune)
    _save_stats(dataset, os.path.join(run_dir, "stats.json"))
    print(E.report_table([report], csv_path=os.path.join(run_dir, "report.csv")))
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_finetune(args):
    flat = merged_config(args)
    manifest = C.read_manifest(os.path.join(args.corpus, "manifest.txt"))
    args.scenario = "S3"
    scenario = _scenario_from_args(args, manifest)
    train_cfg = section(T.TrainConfig, flat, "training")
    inv_cfg = section(InversionConfig, flat, "inversion",
                      alpha=train_cfg.alpha, beta=train_cfg.beta)
    ckpt = T.Checkpoint.load(args.checkpoint)
    decomposer = D.load_decomposer(args.decomp) if args.decomp else None
    splits = C.make_splits(manifest, scenario)
    T.leakage_check(splits, manifest, scenario)
    all_ids = splits.train + splits.validation + splits.fine_tune + splits.test
    dataset = T.Dataset(manifest, all_ids)
    dataset.fit_stats(splits.train)
    dataset.add_speaker_stats(splits.fine_tune)
    run_dir = fresh_run_dir(args.out, f"S3-finetune-{ckpt.variant}")
    tuned = T.fine_tune(ckpt, dataset, splits, train_cfg, args.seed,
                        decomposer=decomposer, inv_config=inv_cfg)
    tuned.save(os.path.join(run_dir, "checkpoint.bin"))
    report = T.evaluate_checkpoint(tuned, dataset, splits.test, scenario,
                                   decomposer=decomposer, inv_config=inv_cfg,
                                   config=train_cfg)
    print(E.report_table([report], csv_path=os.path.join(run_dir, "report.csv")))
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_eval(args):
    reports = []
    for root, _, files in os.walk(args.out):
        if "report.json" not in files:
            continue
        with open(os.path.join(root, "report.json")) as fh:
            blob = json.load(fh)
        meta = blob["metadata"]
        if args.scenario and meta.get("scenario") != args.scenario:
            continue
        if args.variant not in (None, "all") and meta.get("variant") != args.variant:
            continue
        reports.append(E.MetricsReport(channel_rmse=blob["channel_rmse"],
                                       channel_cc=blob["channel_cc"],
                                       mean_rmse=blob["mean_rmse"],
                                       mean_cc=blob["mean_cc"], metadata=meta))
    if not reports:
        raise C.CorpusError(f"no report.json files under {args.out} "
                            "matching the filters")
    reports.sort(key=lambda r: (r.metadata.get("scenario", ""),
                                r.metadata.get("variant", "")))
    csv_path = args.csv or os.path.join(args.out, "summary.csv")
    print(E.report_table(reports, csv_path=csv_path))
    return EXIT_OK


def cmd_infer(args):
    run_dir = args.run
    with open(os.path.join(run_dir, "config.json")) as fh:
        run_cfg = json.load(fh)
    variant = get_variant(run_cfg["variant"])
    inv_cfg = InversionConfig(**run_cfg["inversion"])
    inv_cfg = dataclasses.replace(
        inv_cfg, conv_kernels=tuple(inv_cfg.conv_kernels))
    ckpt = T.Checkpoint.load(os.path.join(run_dir, "checkpoint.bin"))
    acoustic_stats, ema_global, ema_speakers = _load_stats(
        os.path.join(run_dir, "stats.json"))
    decomposer = None
    decomp_path = os.path.join(run_dir, "decomp.bin")
    if variant.use_sdn:
        decomposer = D.load_decomposer(decomp_path)
        decomposer.freeze()

    utt = C.read_interchange(args.input)
    feats = F.append_deltas(F.compute_mfcc(utt.audio, utt.audio_rate_hz))
    feats_z = F.zscore_apply(feats.data, acoustic_stats).astype(np.float32)
    model = InversionModel(inv_cfg, variant, seed=ckpt.seed)
    model.load_leaves(ckpt.best_params)
    out = model.forward(Tensor(feats_z[None]), decomposer=decomposer)
    stats = ema_speakers.get(utt.speaker_id, ema_global)
    lip_z = (out["lip"].data[0] if out["lip"] is not None
             else np.zeros_like(out["tongue"].data[0]))
    both = np.concatenate([lip_z, out["tongue"].data[0]], axis=1)
    both_mm = F.zscore_unapply(both, stats)
    ema = C.EmaTrajectory(channels=list(C.CANONICAL_CHANNELS),
                          rate_hz=feats.frame_rate_hz,
                          data=both_mm.astype(np.float32))
    pred = C.Utterance(id=utt.id + "_pred", speaker_id=utt.speaker_id,
                       audio=utt.audio, audio_rate_hz=utt.audio_rate_hz, ema=ema)
    C.write_interchange(pred, args.output)
    print(f"wrote predicted trajectories to {args.output}")
    return EXIT_OK


def cmd_plot(args):
    run_dir = args.run
    with open(os.path.join(run_dir, "report.json")) as fh:
        blob = json.load(fh)
    report = E.MetricsReport(channel_rmse=blob["channel_rmse"],
                             channel_cc=blob["channel_cc"],
                             mean_rmse=blob["mean_rmse"],
                             mean_cc=blob["mean_cc"],
                             metadata=blob["metadata"])
    pred = np.load(os.path.join(run_dir, "sample_pred.npy"))
    truth = np.load(os.path.join(run_dir, "sample_truth.npy"))
    written = E.plot_outputs(report, pred, truth, args.out or run_dir)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_gradcheck(args):
    reports = T.run_grad_checks()
    ok = True
    for name, rep in reports.items():
        tol = 1e-4
        print(f"{name}: {rep.summary(tol)}")
        ok = ok and rep.passed(tol)
    print(f"overall: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


# ---- argument parsing ----------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="artinv",
        description="Acoustic-to-articulatory inversion pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="runs"):
        p.add_argument("--config", help="key-value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=out_default)

    p = sub.add_parser("convert", help="convert an EST-track corpus to the "
                                       "interchange format")
    p.add_argument("input", help="directory of <id>.ema + <id>.wav files")
    p.add_argument("--name", help="corpus name for the manifest")
    p.add_argument("--channel-map", help="file mapping raw to canonical "
                                         "channel names")
    common(p, out_default="converted")
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("synth", help="generate the synthetic parallel corpus")
    common(p, out_default="synth-corpus")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("pretrain-sdn", help="pre-train the speech "
                                            "decomposition network")
    p.add_argument("--corpus", required=True, help="converted corpus directory")
    common(p)
    p.set_defaults(fn=cmd_pretrain_sdn)

    p = sub.add_parser("train", help="train an inversion model for a scenario")
    p.add_argument("--corpus", required=True)
    p.add_argument("--scenario", required=True, choices=C.SCENARIOS)
    p.add_argument("--variant", default="full", choices=sorted(VARIANTS))
    p.add_argument("--target-speaker")
    p.add_argument("--decomp", help="reuse a pretrained decomposition "
                                    "checkpoint")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint on the "
                                        "target speaker (S3)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target-speaker", required=True)
    p.add_argument("--decomp")
    common(p)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="tabulate reports from run directories")
    p.add_argument("--scenario", choices=C.SCENARIOS)
    p.add_argument("--variant", default="all",
                   choices=sorted(VARIANTS) + ["all"])
    p.add_argument("--csv")
    common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="predict trajectories for one utterance")
    p.add_argument("--run", required=True, help="training run directory")
    p.add_argument("--input", required=True, help="interchange utterance file")
    p.add_argument("--output", required=True)
    common(p)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("plot", help="emit plots for a run directory")
    p.add_argument("--run", required=True)
    common(p, out_default=None)
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("gradcheck", help="finite-difference gradient "
                                         "verification of all custom layers")
    common(p)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("ARTINV_LOGLEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, T.TrainingError) as exc:
        if isinstance(exc, (T.DivergenceError,)):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (C.CorpusError, F.FrontendError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except F.LeakageError as exc:
        print(f"leakage guard: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
