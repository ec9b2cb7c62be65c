"""Training loops, scenario orchestration, fine-tuning, ablation variants,
checkpointing, and the gradient-verification harness."""

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import decomp
from .corpus import make_splits, select_channels
from .decomp import SpeechDecomposer, pad_batch
from .evaluate import evaluate_predictions
from .frontend import (LeakageError, MfccConfig, align_frames, append_deltas,
                       compute_mfcc, lowpass_ema, zscore_apply, zscore_fit,
                       zscore_unapply)
from .inversion import InversionConfig, InversionModel, combined_loss, get_variant
from .nn.autodiff import Tensor
from .nn.gradcheck import grad_check
from .nn.layers import zero_grads
from .nn.optim import Adam, clip_global_norm
from .nn.serialize import config_hash, load_arrays, save_arrays

log = logging.getLogger(__name__)


class TrainingError(Exception):
    pass


class DivergenceError(TrainingError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 5
    iterations: int = 28800
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 0.5
    beta: float = 0.5
    gradient_clip_norm: float = 5.0
    eval_every: int = 500
    early_stop_patience: int = 0        # 0 disables early stopping
    fine_tune_iter_scale: float = 0.2
    fine_tune_lr_scale: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0:
            raise TrainingError("learning rate and batch size must be positive")
        if self.alpha + self.beta <= 0:
            raise TrainingError("alpha + beta must be positive")

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# ---- data preparation ----------------------------------------------------

@dataclass
class PreparedUtterance:
    id: str
    speaker_id: str
    feats: np.ndarray        # (T, D) raw MFCC(+deltas)
    lip_mm: np.ndarray       # (T, 6)
    tongue_mm: np.ndarray    # (T, 6)


def prepare_utterance(utt, mfcc_config=None, lowpass_cutoff_hz=20.0):
    cfg = mfcc_config or MfccConfig()
    feats = append_deltas(compute_mfcc(utt.audio, utt.audio_rate_hz, cfg))
    ema = lowpass_ema(utt.ema, lowpass_cutoff_hz)
    feats, ema = align_frames(feats, ema)
    lip, tongue = select_channels(ema)
    return PreparedUtterance(id=utt.id, speaker_id=utt.speaker_id,
                             feats=feats.data, lip_mm=lip, tongue_mm=tongue)


class Dataset:
    """Prepared utterances plus train-split normalization statistics.

    Acoustic statistics are global over the training split; EMA statistics
    are per speaker with a pooled-train fallback for unseen speakers.
    """

    def __init__(self, manifest, ids, mfcc_config=None, lowpass_cutoff_hz=20.0):
        self.items = {}
        for utt_id in ids:
            utt = manifest.load(utt_id)
            self.items[utt_id] = prepare_utterance(utt, mfcc_config,
                                                   lowpass_cutoff_hz)
        self.acoustic_stats = None
        self.ema_stats = {}
        self.ema_stats_global = None
        self._fit_speakers = set()

    def fit_stats(self, train_ids, split_tag="train"):
        feats = np.concatenate([self.items[i].feats for i in train_ids])
        self.acoustic_stats = zscore_fit(feats, split_tag=split_tag)
        by_speaker = {}
        for utt_id in train_ids:
            item = self.items[utt_id]
            by_speaker.setdefault(item.speaker_id, []).append(
                np.concatenate([item.lip_mm, item.tongue_mm], axis=1))
        all_ema = []
        for speaker, blocks in sorted(by_speaker.items()):
            block = np.concatenate(blocks)
            self.ema_stats[speaker] = zscore_fit(block, split_tag=split_tag,
                                                 scope="per_speaker")
            all_ema.append(block)
        self.ema_stats_global = zscore_fit(np.concatenate(all_ema),
                                           split_tag=split_tag)
        self._fit_speakers = set(by_speaker)

    def add_speaker_stats(self, ids, split_tag="train"):
        """Fit EMA stats for a speaker from their training-side split
        (fine-tuning)."""
        by_speaker = {}
        for utt_id in ids:
            item = self.items[utt_id]
            by_speaker.setdefault(item.speaker_id, []).append(
                np.concatenate([item.lip_mm, item.tongue_mm], axis=1))
        for speaker, blocks in by_speaker.items():
            self.ema_stats[speaker] = zscore_fit(np.concatenate(blocks),
                                                 split_tag=split_tag,
                                                 scope="per_speaker")
            self._fit_speakers.add(speaker)

    def _speaker_stats(self, speaker):
        return self.ema_stats.get(speaker, self.ema_stats_global)

    def feats_z(self, utt_id):
        return zscore_apply(self.items[utt_id].feats,
                            self.acoustic_stats).astype(np.float32)

    def targets_z(self, utt_id):
        item = self.items[utt_id]
        stats = self._speaker_stats(item.speaker_id)
        both = zscore_apply(np.concatenate([item.lip_mm, item.tongue_mm], axis=1),
                            stats)
        return both[:, :6].astype(np.float32), both[:, 6:].astype(np.float32)

    def tongue_to_mm(self, tongue_z, speaker):
        stats = self._speaker_stats(speaker)
        full = np.concatenate(
            [np.zeros_like(tongue_z), np.asarray(tongue_z, dtype=np.float64)],
            axis=1)
        return zscore_unapply(full, stats)[:, 6:]


# ---- checkpoints ---------------------------------------------------------

@dataclass
class Checkpoint:
    step: int
    params: dict             # leaf name -> ndarray (current)
    best_params: dict        # leaf name -> ndarray (best validation)
    opt_state: dict
    config_hash: str
    best_val: float
    variant: str
    seed: int
    metrics_log: list = field(default_factory=list)

    def save(self, path):
        arrays = {}
        for name, arr in self.params.items():
            arrays[f"param/{name}"] = arr
        for name, arr in self.best_params.items():
            arrays[f"best/{name}"] = arr
        for name, arr in self.opt_state["m"].items():
            arrays[f"opt_m/{name}"] = arr
        for name, arr in self.opt_state["v"].items():
            arrays[f"opt_v/{name}"] = arr
        meta = {"step": self.step, "config_hash": self.config_hash,
                "best_val": repr(self.best_val), "variant": self.variant,
                "seed": self.seed, "opt_t": self.opt_state["t"]}
        save_arrays(path, meta, arrays)

    @classmethod
    def load(cls, path):
        meta, arrays = load_arrays(path)
        params, best, m, v = {}, {}, {}, {}
        for name, arr in arrays.items():
            group, _, leaf = name.partition("/")
            {"param": params, "best": best, "opt_m": m, "opt_v": v}[group][leaf] = arr
        return cls(step=int(meta["step"]), params=params, best_params=best,
                   opt_state={"t": int(meta["opt_t"]), "m": m, "v": v},
                   config_hash=meta["config_hash"],
                   best_val=float(meta["best_val"]),
                   variant=meta["variant"], seed=int(meta["seed"]))


def _full_config_hash(inv_config, train_config, variant):
    return config_hash({"inversion": inv_config.as_dict(),
                        "training": train_config.as_dict(),
                        "variant": variant.name})


# ---- core training loop --------------------------------------------------

def _batch_for_step(ids, batch_size, seed, step):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 400, step]))
    take = min(batch_size, len(ids))
    return [ids[i] for i in rng.choice(len(ids), size=take, replace=False)]


def _forward_loss(model, dataset, ids, decomposer, alpha, beta):
    feats = [dataset.feats_z(i) for i in ids]
    targets = [dataset.targets_z(i) for i in ids]
    x, mask, lengths = pad_batch(feats)
    lip_y = np.zeros((len(ids), x.shape[1], 6), dtype=np.float32)
    tongue_y = np.zeros_like(lip_y)
    for b, (lip, tongue) in enumerate(targets):
        lip_y[b, :lip.shape[0]] = lip
        tongue_y[b, :tongue.shape[0]] = tongue
    out = model.forward(Tensor(x), decomposer=decomposer, mask=Tensor(mask),
                        lengths=lengths)
    loss = combined_loss(lip_y, out["lip"], tongue_y, out["tongue"],
                         alpha=alpha, beta=beta, mask=Tensor(mask))
    n_valid = float(mask.sum()) * 6.0
    return loss * (1.0 / n_valid), out, mask, lengths


def _eval_metrics(model, dataset, ids, decomposer, alpha, beta):
    """Validation loss plus un-normalized tongue RMSE/CC over a split."""
    total, frames = 0.0, 0.0
    preds, truths = [], []
    for utt_id in ids:
        loss, out, mask, _ = _forward_loss(model, dataset, [utt_id], decomposer,
                                           alpha, beta)
        n = dataset.items[utt_id].feats.shape[0]
        total += float(loss.data) * n
        frames += n
        item = dataset.items[utt_id]
        preds.append(dataset.tongue_to_mm(out["tongue"].data[0, :n], item.speaker_id))
        truths.append(item.tongue_mm)
    report = evaluate_predictions(preds, truths)
    return total / max(frames, 1.0), report


def train_model(dataset, splits, config, variant, seed, decomposer=None,
                inv_config=None, resume=None, run_dir=None,
                train_ids=None, val_ids=None):
    """Train one inversion model; returns the checkpoint (current + best).

    ``train_ids``/``val_ids`` override the split lists (fine-tuning).
    Deterministic for fixed (seed, config, data): batch order at step ``s``
    depends only on (seed, s), so resuming from a checkpoint continues the
    identical trajectory.
    """
    variant = get_variant(variant) if isinstance(variant, str) else variant
    inv_config = inv_config or InversionConfig(alpha=config.alpha,
                                               beta=config.beta)
    if variant.use_sdn and decomposer is None:
        raise TrainingError(f"variant {variant.name!r} needs a pretrained "
                            "decomposition model")
    train_ids = sorted(train_ids if train_ids is not None else splits.train)
    val_ids = sorted(val_ids if val_ids is not None else splits.validation)
    if not train_ids:
        raise TrainingError("empty training split")

    model = InversionModel(inv_config, variant, seed=seed)
    opt = Adam(model.params, lr=config.learning_rate, beta1=config.beta1,
               beta2=config.beta2, eps=config.adam_eps)
    chash = _full_config_hash(inv_config, config, variant)
    start_step = 0
    best_val = np.inf
    leaves = model.leaves()
    best_arrays = {k: v.data.copy() for k, v in leaves.items()}
    metrics_log = []

    if resume is not None:
        if resume.config_hash != chash:
            raise TrainingError(
                f"checkpoint config hash {resume.config_hash} does not match "
                f"current config {chash}; refusing to resume")
        model.load_leaves(resume.params)
        opt.load_state_dict(resume.opt_state)
        start_step = resume.step
        best_val = resume.best_val
        best_arrays = {k: v.copy() for k, v in resume.best_params.items()}

    if decomposer is not None:
        decomposer.freeze()

    t0 = time.time()
    stale = 0
    last_step = start_step
    last_train_loss = np.nan
    for step in range(start_step + 1, config.iterations + 1):
        last_step = step
        batch = _batch_for_step(train_ids, config.batch_size, seed, step)
        zero_grads(model.params)
        loss, _, _, _ = _forward_loss(model, dataset, batch, decomposer,
                                      config.alpha, config.beta)
        if not np.isfinite(loss.data):
            raise DivergenceError(
                f"loss became {loss.data} at step {step} "
                f"(lr={config.learning_rate}, batch={batch})")
        loss.backward()
        clip_global_norm(leaves, config.gradient_clip_norm)
        opt.step()
        last_train_loss = float(loss.data)

        if step % config.eval_every == 0 or step == config.iterations:
            if val_ids:
                val_loss, report = _eval_metrics(model, dataset, val_ids,
                                                 decomposer, config.alpha,
                                                 config.beta)
                val_rmse, val_cc = report.mean_rmse, report.mean_cc
            else:
                val_loss, val_rmse, val_cc = float(loss.data), np.nan, np.nan
            line = (f"step {step} train_loss {float(loss.data):.6f} "
                    f"val_loss {val_loss:.6f} val_rmse {val_rmse:.4f} "
                    f"val_cc {val_cc:.4f} wall_s {time.time() - t0:.1f}")
            metrics_log.append(line)
            log.info("%s %s", variant.name, line)
            if run_dir:
                with open(os.path.join(run_dir, "metrics.log"), "a") as fh:
                    fh.write(line + "\n")
            if val_loss < best_val:
                best_val = val_loss
                best_arrays = {k: v.data.copy() for k, v in leaves.items()}
                stale = 0
            else:
                stale += 1
                if config.early_stop_patience and stale >= config.early_stop_patience:
                    log.info("early stop at step %d", step)
                    break

    if not np.isfinite(best_val):  # no eval happened; use final params
        best_arrays = {k: v.data.copy() for k, v in leaves.items()}
        best_val = last_train_loss

    return Checkpoint(step=last_step,
                      params={k: v.data.copy() for k, v in leaves.items()},
                      best_params=best_arrays, opt_state=opt.state_dict(),
                      config_hash=chash, best_val=float(best_val),
                      variant=variant.name, seed=seed, metrics_log=metrics_log)


def fine_tune(checkpoint, dataset, splits, config, seed, decomposer=None,
              inv_config=None, run_dir=None):
    """Continue training on the target speaker's fine-tune split.

    Uses a reduced schedule (0.2x iterations, 0.5x learning rate) and keeps
    the decomposition model frozen. A zero-iteration budget returns the
    checkpoint parameters unchanged.
    """
    if not splits.fine_tune:
        raise TrainingError("fine-tune split is empty")
    variant = get_variant(checkpoint.variant)
    ft_iters = int(round(config.iterations * config.fine_tune_iter_scale))
    ft_config = TrainConfig(**{**config.as_dict(),
                               "learning_rate": config.learning_rate *
                               config.fine_tune_lr_scale,
                               "iterations": ft_iters or 1})
    inv_config = inv_config or InversionConfig(alpha=config.alpha,
                                               beta=config.beta)
    model = InversionModel(inv_config, variant, seed=seed)
    model.load_leaves(checkpoint.best_params)
    if ft_iters == 0:
        return Checkpoint(step=0, params=dict(checkpoint.best_params),
                          best_params=dict(checkpoint.best_params),
                          opt_state=Adam(model.params).state_dict(),
                          config_hash=checkpoint.config_hash,
                          best_val=checkpoint.best_val,
                          variant=checkpoint.variant, seed=seed)

    opt = Adam(model.params, lr=ft_config.learning_rate, beta1=config.beta1,
               beta2=config.beta2, eps=config.adam_eps)
    if decomposer is not None:
        decomposer.freeze()
    leaves = model.leaves()
    train_ids = sorted(splits.fine_tune)
    best_val = np.inf
    best_arrays = {k: v.data.copy() for k, v in leaves.items()}
    for step in range(1, ft_iters + 1):
        batch = _batch_for_step(train_ids, ft_config.batch_size, seed + 7919, step)
        zero_grads(model.params)
        loss, _, _, _ = _forward_loss(model, dataset, batch, decomposer,
                                      config.alpha, config.beta)
        if not np.isfinite(loss.data):
            raise DivergenceError(f"fine-tune loss became {loss.data} at "
                                  f"step {step}")
        loss.backward()
        clip_global_norm(leaves, config.gradient_clip_norm)
        opt.step()
        if step % config.eval_every == 0 or step == ft_iters:
            val_loss, _ = _eval_metrics(model, dataset, train_ids, decomposer,
                                        config.alpha, config.beta)
            if val_loss < best_val:
                best_val = val_loss
                best_arrays = {k: v.data.copy() for k, v in leaves.items()}
    return Checkpoint(step=ft_iters,
                      params={k: v.data.copy() for k, v in leaves.items()},
                      best_params=best_arrays, opt_state=opt.state_dict(),
                      config_hash=checkpoint.config_hash, best_val=float(best_val),
                      variant=checkpoint.variant, seed=seed)


# ---- scenario orchestration ---------------------------------------------

def leakage_check(splits, manifest, scenario):
    """Assert the target speaker never reaches a training-side split."""
    if scenario.kind not in ("S3", "S4"):
        return
    target_ids = set(manifest.ids_for_speaker(scenario.target_speaker))
    sides = {"train": splits.train, "validation": splits.validation}
    if scenario.kind == "S4":
        sides["fine_tune"] = splits.fine_tune
    for side, ids in sides.items():
        hit = target_ids & set(ids)
        if hit:
            raise LeakageError(
                f"{scenario.kind}: target speaker utterances "
                f"{sorted(hit)[:3]}... found in {side} split")


def pretrain_decomposer(dataset, ids, model_config=None, train_config=None,
                        seed=0, val_fraction=0.1):
    """Pre-train the decomposition model on a split's acoustics only."""
    ids = sorted(ids)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 500]))
    rng.shuffle(ids)
    n_val = max(1, int(len(ids) * val_fraction)) if len(ids) > 1 else 0
    val_ids, train_ids = ids[:n_val], ids[n_val:]
    feats = {i: dataset.feats_z(i) for i in ids}
    model, history = decomp.pretrain([feats[i] for i in train_ids],
                                     [feats[i] for i in val_ids],
                                     model_config=model_config,
                                     train_config=train_config, seed=seed)
    return model, history


def run_scenario(manifest, scenario, variant, config, inv_config=None,
                 decomp_config=None, pretrain_config=None, decomposer=None,
                 mfcc_config=None, run_dir=None):
    """Full protocol for one scenario and variant; returns the test report.

    Composes split generation, decomposition pretraining (when the variant
    uses it), supervised training, S3 fine-tuning, and test-set evaluation
    in mm space. Leakage guards run before any statistic is fitted.
    """
    variant = get_variant(variant) if isinstance(variant, str) else variant
    splits = make_splits(manifest, scenario)
    leakage_check(splits, manifest, scenario)
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.json"), "w") as fh:
            json.dump({"scenario": scenario.kind, "variant": variant.name,
                       "seed": scenario.seed,
                       "training": config.as_dict(),
                       "inversion": (inv_config or InversionConfig()).as_dict()},
                      fh, indent=2, default=str)

    all_ids = (splits.train + splits.validation + splits.fine_tune + splits.test)
    dataset = Dataset(manifest, all_ids, mfcc_config=mfcc_config)
    dataset.fit_stats(splits.train)

    if variant.use_sdn and decomposer is None:
        decomposer, _ = pretrain_decomposer(
            dataset, splits.train + splits.validation,
            model_config=decomp_config, train_config=pretrain_config,
            seed=scenario.seed)
    if decomposer is not None:
        decomposer.freeze()

    ckpt = train_model(dataset, splits, config, variant, scenario.seed,
                       decomposer=decomposer, inv_config=inv_config,
                       run_dir=run_dir)
    if scenario.kind == "S3":
        dataset.add_speaker_stats(splits.fine_tune)
        ckpt = fine_tune(ckpt, dataset, splits, config, scenario.seed,
                         decomposer=decomposer, inv_config=inv_config,
                         run_dir=run_dir)

    report, preds, truths = evaluate_checkpoint(
        ckpt, dataset, splits.test, scenario, decomposer=decomposer,
        inv_config=inv_config, config=config, collect=True)
    if run_dir:
        ckpt.save(os.path.join(run_dir, "checkpoint.bin"))
        if decomposer is not None:
            from .decomp import save_decomposer
            save_decomposer(decomposer, os.path.join(run_dir, "decomp.bin"),
                            seed=scenario.seed)
        np.save(os.path.join(run_dir, "sample_pred.npy"), preds[0])
        np.save(os.path.join(run_dir, "sample_truth.npy"), truths[0])
        with open(os.path.join(run_dir, "report.json"), "w") as fh:
            json.dump({"channel_rmse": report.channel_rmse,
                       "channel_cc": report.channel_cc,
                       "mean_rmse": report.mean_rmse,
                       "mean_cc": report.mean_cc,
                       "metadata": report.metadata}, fh, indent=2)
    return report


def evaluate_checkpoint(ckpt, dataset, test_ids, scenario=None, decomposer=None,
                        inv_config=None, config=None, collect=False):
    """Evaluate best-validation parameters on a test split, in mm space."""
    if not test_ids:
        raise TrainingError("empty test split")
    config = config or TrainConfig()
    variant = get_variant(ckpt.variant)
    inv_config = inv_config or InversionConfig(alpha=config.alpha,
                                               beta=config.beta)
    model = InversionModel(inv_config, variant, seed=ckpt.seed)
    model.load_leaves(ckpt.best_params)
    if decomposer is not None:
        decomposer.freeze()
    preds, truths = [], []
    for utt_id in sorted(test_ids):
        item = dataset.items[utt_id]
        x = dataset.feats_z(utt_id)[None]
        out = model.forward(Tensor(x), decomposer=decomposer)
        preds.append(dataset.tongue_to_mm(out["tongue"].data[0], item.speaker_id))
        truths.append(item.tongue_mm)
    meta = {"variant": ckpt.variant, "seed": ckpt.seed}
    if scenario is not None:
        meta.update({"scenario": scenario.kind, "seed": scenario.seed})
    report = evaluate_predictions(preds, truths, metadata=meta)
    if collect:
        return report, preds, truths
    return report


# ---- gradient verification harness --------------------------------------

def run_grad_checks(which=None, step=1e-5):
    """Finite-difference checks for every custom layer and the full stack.

    Returns {name: GradCheckReport}; all models are built in float64.
    """
    from .nn import layers as L
    from .nn.autodiff import concat as cat

    rng = np.random.default_rng(12345)
    checks = {}

    def in_loss(params):
        y, _ = L.instance_norm(params["x"], eps=1e-5)
        return (y * y).sum() + (y * Tensor(w_in)).sum()

    x_in = rng.standard_normal((2, 7, 3))
    w_in = rng.standard_normal((2, 7, 3))
    checks["instance_norm"] = (
        {"x": Tensor(x_in.copy(), requires_grad=True)}, in_loss)

    def adain_loss(params):
        y = L.adain(params["x"], params["gamma"], params["beta"], eps=1e-5)
        return (y * y).sum() + (y * Tensor(w_ad)).sum()

    w_ad = rng.standard_normal((2, 6, 3))
    checks["adain"] = ({"x": Tensor(rng.standard_normal((2, 6, 3)), requires_grad=True),
                        "gamma": Tensor(rng.standard_normal((2, 3)), requires_grad=True),
                        "beta": Tensor(rng.standard_normal((2, 3)), requires_grad=True)},
                       adain_loss)

    conv_p = L.conv1d_params(rng, 3, 2, 2, np.float64)
    conv_x = rng.standard_normal((2, 6, 2))
    w_conv = rng.standard_normal((2, 6, 2))

    def conv_loss(params):
        y = L.conv1d(Tensor(conv_x), params)
        return (y * y).sum() + (y * Tensor(w_conv)).sum()

    checks["conv1d"] = (conv_p, conv_loss)

    cell_p = L.lstm_params(rng, 3, 2, np.float64)
    cell_x = rng.standard_normal((2, 1, 3))

    def cell_loss(params):
        y = L.lstm(Tensor(cell_x), params)
        return (y * y).sum()

    checks["lstm_cell"] = (cell_p, cell_loss)

    seq_p = L.lstm_params(rng, 3, 2, np.float64)
    seq_x = rng.standard_normal((2, 5, 3))
    w_seq = rng.standard_normal((2, 5, 2))

    def seq_loss(params):
        y = L.lstm(Tensor(seq_x), params)
        return (y * y).sum() + (y * Tensor(w_seq)).sum()

    checks["lstm_sequence"] = (seq_p, seq_loss)

    bl_p = L.blstm_params(rng, 3, 2, np.float64)
    bl_x = rng.standard_normal((2, 5, 3))
    w_bl = rng.standard_normal((2, 5, 2))

    def bl_loss(params):
        y, _, _ = L.blstm(Tensor(bl_x), params, lengths=[5, 3])
        return (y * y).sum() + (y * Tensor(w_bl)).sum()

    checks["blstm_average"] = (bl_p, bl_loss)

    # full downsized stack: tiny widths, T=5, frozen decomposition model
    tiny_inv = InversionConfig(input_dim=3, d_speaker=4, d_content=4,
                               conv_kernels=(3,), conv_channels=2,
                               blstm_hidden=4, n_blstm=3, fc_hidden=4, d_proj=4)
    tiny_dec = decomp.DecompConfig(input_dim=3, d_speaker=4, d_content=4,
                                   kernel=3, speaker_channels=(4, 4),
                                   content_channels=(4,), decoder_channels=(4, 4))
    decomposer = SpeechDecomposer(tiny_dec, seed=1, dtype=np.float64)
    decomposer.freeze()
    full_model = InversionModel(tiny_inv, get_variant("full"), seed=1,
                                dtype=np.float64)
    full_x = rng.standard_normal((1, 5, 3))
    full_lip = rng.standard_normal((1, 5, 6))
    full_tongue = rng.standard_normal((1, 5, 6))

    def full_loss(params):
        out = full_model.forward(Tensor(full_x), decomposer=decomposer)
        return combined_loss(full_lip, out["lip"], full_tongue, out["tongue"],
                             alpha=0.5, beta=0.5)

    checks["full_stack"] = (full_model.params, full_loss)

    reports = {}
    for name, (params, loss_fn) in checks.items():
        if which is not None and name not in which:
            continue
        reports[name] = grad_check(params, loss_fn, step=step)
        log.info("%s: %s", name, reports[name].summary())
    return reports
