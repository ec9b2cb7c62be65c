"""Acoustic frontend: MFCCs, deltas, alignment, filtering, normalization."""

import numpy as np
import pytest

from artinv.corpus import EmaTrajectory
from artinv.frontend import (AcousticFeatures, FrontendError, LeakageError,
                             MfccConfig, align_frames, append_deltas,
                             compute_mfcc, lowpass_ema, zscore_apply,
                             zscore_fit, zscore_unapply)


def test_mfcc_frame_count_one_second():
    # 16000 samples, 400-sample window, 160-sample hop:
    # floor((16000 - 400) / 160) + 1 = 98 frames.
    audio = np.sin(2 * np.pi * 440 * np.arange(16000) / 16000.0)
    feats = compute_mfcc(audio, 16000.0)
    assert feats.data.shape == (98, 13)
    assert feats.frame_rate_hz == pytest.approx(100.0)


def test_mfcc_deterministic_and_finite(rng):
    audio = rng.standard_normal(8000)
    a = compute_mfcc(audio, 16000.0)
    b = compute_mfcc(audio, 16000.0)
    assert np.array_equal(a.data, b.data)
    assert np.isfinite(a.data).all()


def test_mfcc_custom_hop():
    audio = np.zeros(16000)
    feats = compute_mfcc(audio, 16000.0, MfccConfig(hop_s=0.02))
    assert feats.data.shape[0] == (16000 - 400) // 320 + 1
    assert feats.frame_rate_hz == pytest.approx(50.0)


def test_deltas_of_linear_ramp():
    slope = 0.7
    ramp = slope * np.arange(20.0)[:, None]
    feats = AcousticFeatures(data=ramp, frame_rate_hz=100.0)
    out = append_deltas(feats)
    assert out.data.shape == (20, 3)
    # interior delta of a ramp equals its slope; delta-delta vanishes
    assert np.allclose(out.data[2:-2, 1], slope, atol=1e-12)
    assert np.allclose(out.data[4:-4, 2], 0.0, atol=1e-12)
    assert out.feature_names[1].startswith("d_")
    assert out.feature_names[2].startswith("dd_")


def test_deltas_need_five_frames():
    feats = AcousticFeatures(data=np.zeros((4, 2)), frame_rate_hz=100.0)
    with pytest.raises(FrontendError):
        append_deltas(feats)


def test_features_reject_nonfinite():
    with pytest.raises(FrontendError):
        AcousticFeatures(data=np.array([[np.nan]]), frame_rate_hz=100.0)


def test_align_resamples_to_feature_rate():
    feats = AcousticFeatures(data=np.zeros((98, 3)), frame_rate_hz=100.0)
    ramp = np.arange(200.0, dtype="f4")[:, None]  # 1 s at 200 Hz
    ema = EmaTrajectory(channels=["T1x"], rate_hz=200.0, data=ramp)
    out_feat, out_ema = align_frames(feats, ema)
    assert out_feat.n_frames == out_ema.n_frames == 98
    assert out_ema.rate_hz == pytest.approx(100.0)
    # value at acoustic frame t (t/100 s) is sample 2t of the 200 Hz ramp
    assert np.allclose(out_ema.data[:, 0], 2.0 * np.arange(98), atol=1e-4)


def test_align_rejects_large_mismatch():
    feats = AcousticFeatures(data=np.zeros((100, 3)), frame_rate_hz=100.0)
    ema = EmaTrajectory(channels=["T1x"], rate_hz=100.0,
                        data=np.zeros((50, 1), "f4"))
    with pytest.raises(FrontendError):
        align_frames(feats, ema)


def test_lowpass_attenuates_above_cutoff():
    t = np.arange(500) / 100.0
    hi = np.sin(2 * np.pi * 40.0 * t).astype("f4")[:, None]
    lo = np.sin(2 * np.pi * 2.0 * t).astype("f4")[:, None]
    out_hi = lowpass_ema(EmaTrajectory(["T1x"], 100.0, hi), cutoff_hz=20.0)
    out_lo = lowpass_ema(EmaTrajectory(["T1x"], 100.0, lo), cutoff_hz=20.0)
    mid = slice(100, 400)  # avoid filter edges
    atten_db = 20 * np.log10(np.abs(out_hi.data[mid]).max()
                             / np.abs(hi[mid]).max())
    assert atten_db < -20.0
    assert np.abs(out_lo.data[mid] - lo[mid]).max() < 0.05


def test_lowpass_rejects_cutoff_at_nyquist():
    ema = EmaTrajectory(["T1x"], 100.0, np.zeros((30, 1), "f4"))
    with pytest.raises(FrontendError):
        lowpass_ema(ema, cutoff_hz=50.0)


def test_zscore_round_trip(rng):
    data = rng.standard_normal((200, 4)) * 3.0 + 5.0
    stats = zscore_fit(data, split_tag="train")
    z = zscore_apply(data, stats)
    assert np.allclose(z.mean(axis=0), 0.0, atol=1e-10)
    assert np.allclose(z.std(axis=0), 1.0, atol=1e-10)
    assert np.allclose(zscore_unapply(z, stats), data, atol=1e-10)


def test_zscore_floors_constant_dimensions():
    stats = zscore_fit(np.ones((10, 2)), split_tag="train")
    z = zscore_apply(np.ones((10, 2)), stats)
    assert np.isfinite(z).all()


@pytest.mark.parametrize("tag", ["test", "validation", "fine_tune", "held_out"])
def test_zscore_refuses_non_training_data(tag):
    with pytest.raises(LeakageError):
        zscore_fit(np.zeros((5, 2)), split_tag=tag)


def test_zscore_accepts_pretrain_tag():
    stats = zscore_fit(np.zeros((5, 2)), split_tag="pretrain")
    assert stats.mean.shape == (2,)
