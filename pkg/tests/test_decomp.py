"""Speaker/content decomposition model: normalization sites, pooling,
style re-injection, and serialization."""

import numpy as np
import pytest

from artinv.decomp import (DecompConfig, SpeechDecomposer, load_decomposer,
                           pad_batch, recon_l1, save_decomposer)
from artinv.nn.autodiff import Tensor
from artinv.nn.layers import adain, instance_norm


def small_config(**kw):
    base = dict(input_dim=6, d_speaker=8, d_content=4, kernel=3,
                speaker_channels=(8,), content_channels=(8,),
                decoder_channels=(8, 8))
    base.update(kw)
    return DecompConfig(**base)


def test_content_sites_are_normalized(rng):
    model = SpeechDecomposer(small_config(), seed=0)
    x = Tensor(rng.standard_normal((2, 60, 6)).astype(np.float32) * 2.0)
    sites = []
    model.encode_content(x, in_stats=sites)
    assert len(sites) == 2  # one per content block
    for normalized, _, _ in sites:
        mean = normalized.mean(axis=1)
        std = normalized.std(axis=1)
        assert np.abs(mean).max() <= 1e-5
        assert std.min() >= 0.999 and std.max() <= 1.001


def test_adain_after_in_with_matched_stats_is_identity(rng):
    # The residual of the double normalization is O(eps * x), so the
    # identity is checked with eps far below the target tolerance.
    x = Tensor(rng.standard_normal((3, 40, 5)) * 1.7 + 0.4)
    normalized, (mean, std) = instance_norm(x, eps=1e-12)
    back = adain(normalized, Tensor(std[:, 0]), Tensor(mean[:, 0]), eps=1e-12)
    assert np.abs(back.data - x.data).max() <= 1e-6


def test_adain_after_in_residual_at_default_eps(rng):
    x = Tensor(rng.standard_normal((3, 40, 5)) * 1.7 + 0.4)
    normalized, (mean, std) = instance_norm(x, eps=1e-5)
    back = adain(normalized, Tensor(std[:, 0]), Tensor(mean[:, 0]), eps=1e-5)
    assert np.abs(back.data - x.data).max() <= 1e-4


def test_adain_rejects_channel_mismatch(rng):
    x = Tensor(rng.standard_normal((1, 10, 4)))
    with pytest.raises(ValueError):
        adain(x, Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 3))))


def test_speaker_pooling_tap(rng):
    model = SpeechDecomposer(small_config(), seed=1)
    x = Tensor(rng.standard_normal((2, 30, 6)).astype(np.float32))
    tap = {}
    out = model.encode_speaker(x, tap=tap)
    assert out.shape == (2, 8)
    assert np.allclose(tap["pool_output"], tap["pool_input"].mean(axis=1),
                       atol=1e-6)


def test_speaker_pooling_ignores_padding(rng):
    model = SpeechDecomposer(small_config(), seed=1)
    a = rng.standard_normal((1, 20, 6)).astype(np.float32)
    padded = np.concatenate([a, np.zeros((1, 15, 6), np.float32)], axis=1)
    mask = np.zeros((1, 35, 1), np.float32)
    mask[:, :20] = 1.0
    tap = {}
    masked = model.encode_speaker(Tensor(padded), mask=Tensor(mask), tap=tap)
    # pooled output is the mean over valid frames only
    want = tap["pool_input"][:, :20].mean(axis=1)
    assert np.allclose(masked.data, want, atol=1e-6)
    # without the mask the zero padding would bias the pooled embedding
    naive = tap["pool_input"].mean(axis=1)
    assert not np.allclose(masked.data, naive, atol=1e-3)


def test_content_scale_invariance_linear_mode(rng):
    model = SpeechDecomposer(small_config(linear=True), seed=2)
    x = rng.standard_normal((1, 50, 6)).astype(np.float32)
    base = model.encode_content(Tensor(x)).data
    scaled = model.encode_content(Tensor(2.5 * x)).data
    assert np.allclose(base, scaled, atol=1e-5)


def test_content_offset_invariance_linear_mode(rng):
    model = SpeechDecomposer(small_config(linear=True), seed=2)
    x = rng.standard_normal((1, 50, 6)).astype(np.float32)
    offset = rng.standard_normal((1, 1, 6)).astype(np.float32)
    base = model.encode_content(Tensor(x)).data
    shifted = model.encode_content(Tensor(x + offset)).data
    assert np.allclose(base, shifted, atol=1e-4)


def test_decoder_styles_depend_on_speaker(rng):
    model = SpeechDecomposer(small_config(), seed=3)
    content = Tensor(rng.standard_normal((2, 20, 4)).astype(np.float32))
    s1 = Tensor(rng.standard_normal((2, 8)).astype(np.float32))
    s2 = Tensor(rng.standard_normal((2, 8)).astype(np.float32))
    taps1, taps2 = [], []
    model.decode(s1, content, style_tap=taps1)
    model.decode(s2, content, style_tap=taps2)
    assert len(taps1) == 2
    assert not np.allclose(taps1[0][0], taps2[0][0])


def test_forward_shape(rng):
    model = SpeechDecomposer(small_config(), seed=0)
    x = Tensor(rng.standard_normal((2, 25, 6)).astype(np.float32))
    out = model.forward(x)
    assert out.shape == (2, 25, 6)


def test_recon_l1_hand_case():
    x = Tensor(np.zeros((1, 4, 2), np.float32))
    x_hat = Tensor(np.full((1, 4, 2), 1.5, np.float32))
    assert float(recon_l1(x, x_hat).data) == pytest.approx(1.5)


def test_recon_l1_masked():
    x = Tensor(np.zeros((1, 4, 1), np.float32))
    x_hat = Tensor(np.array([[[2.0], [2.0], [100.0], [100.0]]], np.float32))
    mask = Tensor(np.array([[[1.0], [1.0], [0.0], [0.0]]], np.float32))
    assert float(recon_l1(x, x_hat, mask=mask).data) == pytest.approx(2.0)


def test_pad_batch(rng):
    feats = [rng.standard_normal((5, 3)), rng.standard_normal((8, 3))]
    batch, mask, lengths = pad_batch(feats)
    assert batch.shape == (2, 8, 3)
    assert mask.shape == (2, 8, 1)
    assert list(lengths) == [5, 8]
    assert mask[0, :5].all() and not mask[0, 5:].any()
    assert np.allclose(batch[0, :5], feats[0])
    assert not batch[0, 5:].any()


def test_save_load_round_trip(tmp_path, rng):
    model = SpeechDecomposer(small_config(), seed=4)
    path = tmp_path / "decomp.bin"
    save_decomposer(model, path, seed=4, step=17)
    back = load_decomposer(path)
    assert back.config == model.config
    for name, leaf in model.leaves().items():
        assert np.array_equal(back.leaves()[name].data, leaf.data)
    x = Tensor(rng.standard_normal((1, 20, 6)).astype(np.float32))
    assert np.array_equal(model.forward(x).data, back.forward(x).data)
