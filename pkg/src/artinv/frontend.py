"""DSP front-end: MFCC extraction, delta features, z-normalization, EMA
low-pass filtering, and acoustic/articulatory frame alignment."""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.fftpack import dct
from scipy.signal import butter, filtfilt

from .corpus import CorpusError, EmaTrajectory

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


class FrontendError(Exception):
    pass


class LeakageError(Exception):
    """Normalization statistics were requested from non-training data."""


@dataclass
class MfccConfig:
    window_s: float = 0.025
    hop_s: float = 0.010
    n_cepstra: int = 13
    n_mels: int = 26
    preemphasis: float = 0.97
    log_floor: float = 1e-10

    @property
    def frame_rate_hz(self):
        return 1.0 / self.hop_s


@dataclass
class AcousticFeatures:
    data: np.ndarray                 # (T, D)
    frame_rate_hz: float
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data))
        if not np.isfinite(self.data).all():
            raise FrontendError("acoustic features contain NaN/Inf")
        if not self.feature_names:
            self.feature_names = [f"f{i}" for i in range(self.data.shape[1])]

    @property
    def n_frames(self):
        return self.data.shape[0]


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    scope: str = "global"            # "global" or "per_speaker"

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def _mel_filterbank(n_mels, n_fft, rate):
    points = _mel_to_hz(np.linspace(0.0, _hz_to_mel(rate / 2.0), n_mels + 2))
    bins = np.floor((n_fft + 1) * points / rate).astype(int)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(1, n_mels + 1):
        lo, mid, hi = bins[m - 1], bins[m], bins[m + 1]
        for k in range(lo, mid):
            fb[m - 1, k] = (k - lo) / max(mid - lo, 1)
        for k in range(mid, hi):
            fb[m - 1, k] = (hi - k) / max(hi - mid, 1)
    return fb


def compute_mfcc(audio, rate_hz, config=None):
    """Mel-frequency cepstra of an audio signal.

    Frame count is ``floor((n_samples - window) / hop) + 1``; fully
    deterministic for a given signal and config.
    """
    cfg = config or MfccConfig()
    if rate_hz < 8000:
        raise FrontendError(f"audio rate {rate_hz} Hz below 8 kHz minimum")
    audio = np.asarray(audio, dtype=np.float64)
    window = int(round(cfg.window_s * rate_hz))
    hop = int(round(cfg.hop_s * rate_hz))
    if len(audio) < window:
        raise FrontendError(
            f"audio of {len(audio)} samples shorter than one {window}-sample window")

    emphasized = np.append(audio[0], audio[1:] - cfg.preemphasis * audio[:-1])
    n_frames = (len(emphasized) - window) // hop + 1
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = emphasized[idx] * np.hamming(window)

    n_fft = 1
    while n_fft < window:
        n_fft *= 2
    spectrum = np.abs(np.fft.rfft(frames, n_fft)) ** 2 / n_fft
    fb = _mel_filterbank(cfg.n_mels, n_fft, rate_hz)
    energies = np.log(np.maximum(spectrum @ fb.T, cfg.log_floor))
    cepstra = dct(energies, type=2, axis=1, norm="ortho")[:, :cfg.n_cepstra]
    names = [f"c{i}" for i in range(cfg.n_cepstra)]
    return AcousticFeatures(data=cepstra, frame_rate_hz=cfg.frame_rate_hz,
                            feature_names=names)


def append_deltas(features, width=2):
    """Append delta and delta-delta rows: D -> 3D.

    Deltas use the standard regression window with edge replication.
    """
    x = features.data
    if x.shape[0] < 5:
        raise FrontendError(f"need at least 5 frames for deltas, got {x.shape[0]}")

    def delta(mat):
        padded = np.pad(mat, ((width, width), (0, 0)), mode="edge")
        num = sum(n * (padded[width + n:len(mat) + width + n] -
                       padded[width - n:len(mat) + width - n])
                  for n in range(1, width + 1))
        return num / (2.0 * sum(n * n for n in range(1, width + 1)))

    d1 = delta(x)
    d2 = delta(d1)
    names = (list(features.feature_names)
             + [f"d_{n}" for n in features.feature_names]
             + [f"dd_{n}" for n in features.feature_names])
    return AcousticFeatures(data=np.concatenate([x, d1, d2], axis=1),
                            frame_rate_hz=features.frame_rate_hz,
                            feature_names=names)


def align_frames(features, ema, max_mismatch=0.10):
    """Resample EMA to the acoustic frame rate and truncate both to the
    common length."""
    dur_feat = features.n_frames / features.frame_rate_hz
    dur_ema = ema.n_frames / ema.rate_hz
    longer = max(dur_feat, dur_ema)
    if longer and (longer - min(dur_feat, dur_ema)) / longer > max_mismatch:
        raise FrontendError(
            f"stream durations {dur_feat:.3f}s vs {dur_ema:.3f}s differ by "
            f"more than {max_mismatch:.0%}")
    t_feat = np.arange(features.n_frames) / features.frame_rate_hz
    t_ema = np.arange(ema.n_frames) / ema.rate_hz
    resampled = np.stack(
        [np.interp(t_feat, t_ema, ema.data[:, c].astype(np.float64))
         for c in range(ema.data.shape[1])], axis=1)
    n = min(features.n_frames, resampled.shape[0])
    out_feat = AcousticFeatures(data=features.data[:n],
                                frame_rate_hz=features.frame_rate_hz,
                                feature_names=list(features.feature_names))
    out_ema = EmaTrajectory(channels=list(ema.channels),
                            rate_hz=features.frame_rate_hz,
                            data=resampled[:n].astype(np.float32))
    return out_feat, out_ema


def lowpass_ema(ema, cutoff_hz=20.0, order=4):
    """Zero-phase (forward-backward) low-pass filter per channel."""
    nyquist = ema.rate_hz / 2.0
    if cutoff_hz >= nyquist:
        raise FrontendError(
            f"cutoff {cutoff_hz} Hz must be below Nyquist {nyquist} Hz")
    b, a = butter(order, cutoff_hz / nyquist)
    padlen = min(3 * (max(len(a), len(b)) - 1), ema.n_frames - 1)
    data = filtfilt(b, a, ema.data.astype(np.float64), axis=0, padlen=padlen)
    return EmaTrajectory(channels=list(ema.channels), rate_hz=ema.rate_hz,
                         data=data.astype(np.float32))


def zscore_fit(data, split_tag="train", scope="global"):
    """Fit per-dimension normalization statistics.

    ``split_tag`` must identify training-side data; anything else is a
    leakage bug and raises.
    """
    if split_tag not in ("train", "pretrain"):
        raise LeakageError(
            f"normalization statistics fitted on split {split_tag!r}; "
            "only training-side data is allowed")
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    floored = std < STD_FLOOR
    if floored.any():
        log.warning("zscore_fit: %d zero-variance dimensions floored at %g",
                    int(floored.sum()), STD_FLOOR)
    return NormalizationStats(mean=mean, std=std, scope=scope)


def zscore_apply(data, stats):
    return (np.asarray(data, dtype=np.float64) - stats.mean) / stats.std


def zscore_unapply(data, stats):
    return np.asarray(data, dtype=np.float64) * stats.std + stats.mean
