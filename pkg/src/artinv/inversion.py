"""Supervised inversion stack: multi-scale conv acoustic encoder, lip
auxiliary predictor, feature fusion, and the BLSTM tongue regressor, plus
the combined two-head loss.

Every BLSTM layer averages its two directions (not the usual
concatenation); the averaging contract is exposed for direct testing.
"""

from dataclasses import dataclass

import numpy as np

from .nn.autodiff import Tensor, concat, relu
from .nn.layers import (blstm, blstm_params, conv1d, conv1d_params, dense,
                        dense_params, flatten_tree)

N_LIP = 6
N_TONGUE = 6


class StageError(Exception):
    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"stage '{stage}': {cause}")


@dataclass
class InversionConfig:
    input_dim: int = 39
    d_speaker: int = 128
    d_content: int = 64
    conv_kernels: tuple = (3, 5, 7)
    conv_channels: int = 32
    blstm_hidden: int = 100
    n_blstm: int = 3
    fc_hidden: int = 64
    d_proj: int = 64
    fuse_encoded_acoustics: bool = True
    alpha: float = 0.5
    beta: float = 0.5

    @property
    def d_encoded(self):
        return len(self.conv_kernels) * self.conv_channels

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class Variant:
    """Ablation flags: which of the three add-on modules are active."""
    name: str
    use_sdn: bool
    use_afn: bool
    use_ftn: bool


# Ablation grid: baseline trunk, each add-on alone, both, and the full
# model (fusion projections only make sense with both add-ons present).
VARIANTS = {
    "baseline": Variant("baseline", False, False, False),
    "decomp": Variant("decomp", True, False, False),
    "aux": Variant("aux", False, True, False),
    "decomp-aux": Variant("decomp-aux", True, True, False),
    "full": Variant("full", True, True, True),
}


def get_variant(name):
    if name not in VARIANTS:
        raise KeyError(f"unknown variant {name!r}; expected one of "
                       f"{sorted(VARIANTS)}")
    return VARIANTS[name]


def combined_loss(y_l, yhat_l, y_t, yhat_t, alpha=0.5, beta=0.5, mask=None):
    """Weighted sum of squared errors of the lip and tongue heads.

    Sums run over all frames and channels. Either head may be ``None``
    when its weight is zero or the variant lacks that head.
    """
    if alpha < 0 or beta < 0:
        raise ValueError("loss weights must be non-negative")

    def term(y, yhat):
        y = y if isinstance(y, Tensor) else Tensor(np.asarray(y))
        yhat = yhat if isinstance(yhat, Tensor) else Tensor(np.asarray(yhat))
        if y.shape != yhat.shape:
            raise ValueError(f"shape mismatch {y.shape} vs {yhat.shape}")
        sq = (y - yhat) * (y - yhat)
        if mask is not None:
            sq = sq * mask
        return sq.sum()

    total = None
    if yhat_l is not None and alpha != 0:
        total = term(y_l, yhat_l) * alpha
    if yhat_t is not None and beta != 0:
        t = term(y_t, yhat_t) * beta
        total = t if total is None else total + t
    if total is None:
        total = Tensor(np.asarray(0.0))
    return total


class InversionModel:
    """Acoustic encoder + lip/tongue heads for one ablation variant."""

    def __init__(self, config=None, variant=None, seed=0, dtype=np.float32):
        self.config = config or InversionConfig()
        self.variant = variant or VARIANTS["full"]
        self.dtype = dtype
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence([seed, 300]))

        params = {"multiscale_encoder": {
            f"k{k}": conv1d_params(rng, k, cfg.input_dim, cfg.conv_channels, dtype)
            for k in cfg.conv_kernels}}

        d_p = cfg.d_content + cfg.d_speaker if self.variant.use_sdn else cfg.d_encoded

        if self.variant.use_afn:
            afn = {}
            d_in = d_p
            for i in range(cfg.n_blstm):
                afn[f"blstm{i}"] = blstm_params(rng, d_in, cfg.blstm_hidden, dtype)
                d_in = cfg.blstm_hidden
            afn["fc1"] = dense_params(rng, d_in, cfg.fc_hidden, dtype)
            afn["fc2"] = dense_params(rng, cfg.fc_hidden, N_LIP, dtype)
            params["afn"] = afn

        d_fused = self._fused_dim(d_p)
        if self.variant.use_ftn:
            ftn = {"proj_p": dense_params(rng, d_p, cfg.d_proj, dtype),
                   "proj_a": dense_params(rng, N_LIP, cfg.d_proj, dtype)}
            if cfg.fuse_encoded_acoustics:
                ftn["proj_e"] = dense_params(rng, cfg.d_encoded, cfg.d_proj, dtype)
            params["ftn"] = ftn

        ain = {}
        d_in = d_fused
        for i in range(cfg.n_blstm):
            ain[f"blstm{i}"] = blstm_params(rng, d_in, cfg.blstm_hidden, dtype)
            d_in = cfg.blstm_hidden
        ain["fc1"] = dense_params(rng, d_in, cfg.fc_hidden, dtype)
        ain["fc2"] = dense_params(rng, cfg.fc_hidden, N_TONGUE, dtype)
        params["ain"] = ain
        self.params = params

    def _fused_dim(self, d_p):
        cfg = self.config
        if self.variant.use_ftn:
            return cfg.d_proj * (3 if cfg.fuse_encoded_acoustics else 2)
        dim = cfg.d_encoded  # trunk always sees the encoded acoustics
        if self.variant.use_sdn:
            dim += d_p
        if self.variant.use_afn:
            dim += N_LIP
        return dim

    # ---- stages ----------------------------------------------------------

    def encode_acoustics(self, x):
        """Parallel 1-D convs (kernel sizes from config), channel-concat."""
        p = self.params["multiscale_encoder"]
        outs = [conv1d(x, p[f"k{k}"]) for k in self.config.conv_kernels]
        return relu(concat(outs, axis=-1))

    def personalized_features(self, x, decomposer, mask=None):
        """Per-frame content embedding + broadcast speaker embedding."""
        speaker = decomposer.encode_speaker(x, mask=mask)
        content = decomposer.encode_content(x, mask=mask)
        B, T = x.shape[0], x.shape[1]
        ds = speaker.shape[-1]
        tiled = speaker.reshape(B, 1, ds) + Tensor(
            np.zeros((B, T, ds), dtype=speaker.data.dtype))
        return concat([content, tiled], axis=-1)

    def lip_head(self, p_feat, lengths=None, taps=None):
        return self._blstm_stack(p_feat, self.params["afn"], lengths, taps)

    def tongue_head(self, fused, lengths=None, taps=None):
        return self._blstm_stack(fused, self.params["ain"], lengths, taps)

    def _blstm_stack(self, x, p, lengths, taps):
        h = x
        for i in range(self.config.n_blstm):
            h, o_f, o_b = blstm(h, p[f"blstm{i}"], lengths)
            if taps is not None:
                taps.append((h.data.copy(), o_f.data.copy(), o_b.data.copy()))
        h = relu(dense(h, p["fc1"]))
        return dense(h, p["fc2"])

    def fuse(self, p_feat, lip, encoded):
        """Project each stream to a common width and concatenate (full
        variant); plain concatenation otherwise."""
        cfg = self.config
        if self.variant.use_ftn:
            ftn = self.params["ftn"]
            parts = [dense(p_feat, ftn["proj_p"]), dense(lip, ftn["proj_a"])]
            if cfg.fuse_encoded_acoustics:
                parts.append(dense(encoded, ftn["proj_e"]))
            return concat(parts, axis=-1)
        parts = [encoded]
        if self.variant.use_sdn:
            parts.insert(0, p_feat)
        if self.variant.use_afn:
            parts.append(lip)
        return parts[0] if len(parts) == 1 else concat(parts, axis=-1)

    def forward(self, x, decomposer=None, mask=None, lengths=None, taps=None):
        """Run the full pipeline; returns a dict of stage outputs.

        ``lip`` is None for variants without the auxiliary head.
        """
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))

        def run(stage, fn):
            try:
                return fn()
            except StageError:
                raise
            except Exception as exc:
                raise StageError(stage, exc) from exc

        encoded = run("multiscale_encoder", lambda: self.encode_acoustics(x))
        if self.variant.use_sdn:
            if decomposer is None:
                raise StageError("personalized_features",
                                 "variant requires a pretrained decomposer")
            p_feat = run("personalized_features",
                         lambda: self.personalized_features(x, decomposer, mask))
        else:
            p_feat = encoded
        lip = None
        if self.variant.use_afn:
            lip = run("afn", lambda: self.lip_head(p_feat, lengths, taps))
        fused = run("ftn", lambda: self.fuse(p_feat, lip, encoded))
        tongue = run("ain", lambda: self.tongue_head(fused, lengths, taps))
        return {"encoded": encoded, "personalized": p_feat, "lip": lip,
                "fused": fused, "tongue": tongue}

    def leaves(self):
        return flatten_tree(self.params)

    def load_leaves(self, arrays):
        leaves = self.leaves()
        if set(arrays) != set(leaves):
            raise ValueError("parameter leaf names do not match model config")
        for name, leaf in leaves.items():
            leaf.data = np.asarray(arrays[name], dtype=self.dtype).reshape(
                leaf.data.shape)
