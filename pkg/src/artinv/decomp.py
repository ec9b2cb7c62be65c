"""Speech decomposition: a self-supervised autoencoder that factors
acoustic features into a fixed speaker embedding and a per-frame content
embedding.

The content path is instance-normalized after every conv block, stripping
per-utterance channel statistics; the speaker path average-pools over time;
the decoder re-injects speaker style through adaptive instance
normalization. Training minimizes L1 reconstruction of the input features.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .nn.autodiff import Tensor, absolute, relu
from .nn.layers import (adain, conv1d, conv1d_params, dense, dense_params,
                        flatten_tree, instance_norm, zero_grads)
from .nn.optim import Adam, clip_global_norm

log = logging.getLogger(__name__)


class DivergenceError(Exception):
    pass


@dataclass
class DecompConfig:
    input_dim: int = 39
    d_speaker: int = 128
    d_content: int = 64
    kernel: int = 5
    speaker_channels: tuple = (64, 128, 128)
    content_channels: tuple = (64, 64)      # final block outputs d_content
    decoder_channels: tuple = (64, 64, 64)
    eps: float = 1e-5
    linear: bool = False                     # disable ReLU (invariance tests)

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class PretrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 25
    steps: int = 20000
    eval_every: int = 200
    patience: int = 10
    gradient_clip_norm: float = 5.0


class SpeechDecomposer:
    """Speaker/content factorization model over (B,T,D) acoustic features."""

    def __init__(self, config=None, seed=0, dtype=np.float32):
        self.config = config or DecompConfig()
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence([seed, 100]))
        cfg = self.config
        k = cfg.kernel

        spk = {}
        c_in = cfg.input_dim
        for i, c_out in enumerate(cfg.speaker_channels):
            spk[f"conv{i}"] = conv1d_params(rng, k, c_in, c_out, dtype)
            c_in = c_out
        spk["dense"] = dense_params(rng, c_in, cfg.d_speaker, dtype)

        content = {}
        c_in = cfg.input_dim
        for i, c_out in enumerate(tuple(cfg.content_channels) + (cfg.d_content,)):
            content[f"conv{i}"] = conv1d_params(rng, k, c_in, c_out, dtype)
            c_in = c_out

        decoder = {}
        c_in = cfg.d_content
        for i, c_out in enumerate(cfg.decoder_channels):
            decoder[f"conv{i}"] = conv1d_params(rng, k, c_in, c_out, dtype)
            style = dense_params(rng, cfg.d_speaker, 2 * c_out, dtype)
            decoder[f"style{i}"] = style
            c_in = c_out
        decoder["out"] = dense_params(rng, c_in, cfg.input_dim, dtype)

        self.params = {"speaker_encoder": spk, "content_encoder": content,
                       "decoder": decoder}

    # ---- forward paths ---------------------------------------------------

    def encode_speaker(self, x, mask=None, tap=None):
        """Fixed-length speaker embedding via temporal average pooling.

        ``tap``, when given a dict, receives the pooling-layer input and
        output so pooling invariances can be asserted where they hold.
        """
        cfg = self.config
        p = self.params["speaker_encoder"]
        h = x
        for i in range(len(cfg.speaker_channels)):
            h = conv1d(h, p[f"conv{i}"])
            if not cfg.linear:
                h = relu(h)
        h = dense(h, p["dense"])
        if not cfg.linear:
            h = relu(h)
        axis = h.ndim - 2
        if mask is None:
            pooled = h.mean(axis=axis)
        else:
            pooled = (h * mask).sum(axis=axis) / mask.sum(axis=axis)
        if tap is not None:
            tap["pool_input"] = h.data.copy()
            tap["pool_output"] = pooled.data.copy()
        return pooled

    def encode_content(self, x, mask=None, in_stats=None):
        """Per-frame content embedding; instance norm follows every block.

        ``in_stats``, when given a list, collects (normalized, mean, std)
        for every IN site.
        """
        cfg = self.config
        p = self.params["content_encoder"]
        n_blocks = len(cfg.content_channels) + 1
        h = x
        for i in range(n_blocks):
            h = conv1d(h, p[f"conv{i}"])
            if not cfg.linear and i < n_blocks - 1:
                h = relu(h)
            h, stats = instance_norm(h, eps=cfg.eps, mask=mask)
            if in_stats is not None:
                in_stats.append((h.data.copy(),) + stats)
        return h

    def decode(self, speaker, content, mask=None, style_tap=None):
        """Reconstruct features from (speaker, content); AdaIN per block."""
        cfg = self.config
        p = self.params["decoder"]
        h = content
        for i in range(len(cfg.decoder_channels)):
            h = conv1d(h, p[f"conv{i}"])
            style = dense(speaker, p[f"style{i}"])
            c = cfg.decoder_channels[i]
            gamma = style[..., :c] + np.asarray(1.0, dtype=style.dtype)
            beta = style[..., c:]
            if style_tap is not None:
                style_tap.append((gamma.data.copy(), beta.data.copy()))
            h = adain(h, gamma, beta, eps=cfg.eps, mask=mask)
            if not cfg.linear and i < len(cfg.decoder_channels) - 1:
                h = relu(h)
        return dense(h, p["out"])

    def forward(self, x, mask=None):
        speaker = self.encode_speaker(x, mask=mask)
        content = self.encode_content(x, mask=mask)
        return self.decode(speaker, content, mask=mask)

    def leaves(self):
        return flatten_tree(self.params)

    def freeze(self):
        for leaf in self.leaves().values():
            leaf.requires_grad = False

    def load_leaves(self, arrays):
        leaves = self.leaves()
        if set(arrays) != set(leaves):
            raise ValueError("parameter leaf names do not match model config")
        for name, leaf in leaves.items():
            leaf.data = np.asarray(arrays[name], dtype=self.dtype).reshape(
                leaf.data.shape)


def save_decomposer(model, path, seed=0, step=0):
    from .nn.serialize import config_hash, save_arrays
    import json
    cfg = model.config.as_dict()
    meta = {"config": json.dumps(cfg, default=list), "seed": seed, "step": step,
            "config_hash": config_hash(cfg)}
    save_arrays(path, meta, {k: v.data for k, v in model.leaves().items()})


def load_decomposer(path):
    from .nn.serialize import load_arrays
    import json
    meta, arrays = load_arrays(path)
    cfg_dict = json.loads(meta["config"])
    for key in ("speaker_channels", "content_channels", "decoder_channels"):
        cfg_dict[key] = tuple(cfg_dict[key])
    model = SpeechDecomposer(DecompConfig(**cfg_dict), seed=int(meta["seed"]))
    model.load_leaves(arrays)
    return model


def recon_l1(x, x_hat, mask=None):
    """Mean absolute reconstruction error over (valid) elements."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    diff = absolute(x_hat - x if isinstance(x, Tensor) else x_hat - Tensor(x))
    if mask is None:
        return diff.mean()
    total = (diff * mask).sum()
    return total / float(np.sum(mask.data if isinstance(mask, Tensor) else mask)
                         * x.shape[-1] / mask.shape[-1])


def pad_batch(feature_list, dtype=np.float32):
    """Stack variable-length (T,D) arrays into (B,T,D) + mask (B,T,1)."""
    lengths = [f.shape[0] for f in feature_list]
    T = max(lengths)
    D = feature_list[0].shape[1]
    batch = np.zeros((len(feature_list), T, D), dtype=dtype)
    mask = np.zeros((len(feature_list), T, 1), dtype=dtype)
    for i, f in enumerate(feature_list):
        batch[i, :f.shape[0]] = f
        mask[i, :f.shape[0]] = 1.0
    return batch, mask, lengths


def pretrain(train_features, val_features, model_config=None, train_config=None,
             seed=0, log_lines=None):
    """Pre-train the decomposition model on acoustic features alone.

    ``train_features``/``val_features`` are lists of (T,D) arrays; the
    articulatory side of the corpus is deliberately not accepted here.
    Returns ``(model, history)`` where history is a list of
    (step, train_l1, val_l1) rows.
    """
    cfg = train_config or PretrainConfig()
    model = SpeechDecomposer(model_config, seed=seed)
    opt = Adam(model.params, lr=cfg.learning_rate)
    leaves = model.leaves()
    history = []
    best_val = np.inf
    best_arrays = {k: v.data.copy() for k, v in leaves.items()}
    stale = 0

    def val_loss():
        total, count = 0.0, 0
        for i in range(0, len(val_features), cfg.batch_size):
            chunk = val_features[i:i + cfg.batch_size]
            x, mask, _ = pad_batch(chunk)
            out = model.forward(Tensor(x), mask=Tensor(mask))
            loss = recon_l1(Tensor(x), out, mask=Tensor(mask))
            total += float(loss.data) * len(chunk)
            count += len(chunk)
        return total / max(count, 1)

    for step in range(1, cfg.steps + 1):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 200, step]))
        idx = rng.choice(len(train_features),
                         size=min(cfg.batch_size, len(train_features)),
                         replace=False)
        x, mask, _ = pad_batch([train_features[i] for i in idx])
        zero_grads(model.params)
        out = model.forward(Tensor(x), mask=Tensor(mask))
        loss = recon_l1(Tensor(x), out, mask=Tensor(mask))
        if not np.isfinite(loss.data):
            log.error("pretrain diverged at step %d; restoring best params", step)
            model.load_leaves(best_arrays)
            raise DivergenceError(f"reconstruction loss became {loss.data} "
                                  f"at step {step}")
        loss.backward()
        clip_global_norm(leaves, cfg.gradient_clip_norm)
        opt.step()

        if step % cfg.eval_every == 0 or step == cfg.steps:
            vl = val_loss() if val_features else float(loss.data)
            history.append((step, float(loss.data), vl))
            line = f"step {step} train_l1 {float(loss.data):.6f} val_l1 {vl:.6f}"
            if log_lines is not None:
                log_lines.append(line)
            log.info("pretrain %s", line)
            if vl < best_val:
                best_val = vl
                best_arrays = {k: v.data.copy() for k, v in leaves.items()}
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("pretrain early stop at step %d", step)
                    break

    model.load_leaves(best_arrays)
    return model, history
