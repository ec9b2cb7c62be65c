"""EMA corpus handling: EST track parsing, interchange files, channel
taxonomy, scenario splits, and a synthetic parallel corpus generator.

Trajectories carry the twelve canonical channels (upper lip, lower lip,
lower incisors, and three tongue points, each in x and z). Raw corpora use
per-corpus channel name maps applied at ingestion.
"""

import logging
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

LIP_CHANNELS = ("ULx", "ULz", "LLx", "LLz", "LIx", "LIz")
TONGUE_CHANNELS = ("T1x", "T1z", "T2x", "T2z", "T3x", "T3z")
CANONICAL_CHANNELS = LIP_CHANNELS + TONGUE_CHANNELS

SCENARIOS = ("S1", "S2", "S3", "S4")

INTERCHANGE_MAGIC = "ARTINV_UTT"
INTERCHANGE_VERSION = 1


class CorpusError(Exception):
    pass


class EstParseError(CorpusError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class PayloadLengthError(CorpusError):
    pass


class ChannelMapError(CorpusError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"missing channels: {', '.join(self.missing)}")


class DropUtterance(CorpusError):
    """Raised when an utterance is unusable (e.g. long sensor dropout)."""


class SchemaVersionError(CorpusError):
    pass


class ChecksumError(CorpusError):
    pass


# ---- domain types --------------------------------------------------------

@dataclass
class EmaTrajectory:
    channels: list
    rate_hz: float
    data: np.ndarray           # (T, C) positions in mm
    nan_mask: np.ndarray = None  # True where the sample is valid

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data))
        if len(self.channels) != self.data.shape[1]:
            raise CorpusError(
                f"{len(self.channels)} channel names but "
                f"{self.data.shape[1]} data columns")
        if self.rate_hz <= 0:
            raise CorpusError(f"rate_hz must be positive, got {self.rate_hz}")
        if self.data.shape[0] < 1:
            raise CorpusError("trajectory must have at least one frame")
        if self.nan_mask is None:
            self.nan_mask = ~np.isnan(self.data)

    @property
    def n_frames(self):
        return self.data.shape[0]

    @property
    def duration_s(self):
        return self.n_frames / self.rate_hz


@dataclass
class Utterance:
    id: str
    speaker_id: str
    audio: np.ndarray
    audio_rate_hz: float
    ema: EmaTrajectory
    meta: dict = field(default_factory=dict)

    def check_durations(self, tolerance_s=0.05):
        audio_s = len(self.audio) / self.audio_rate_hz
        if abs(audio_s - self.ema.duration_s) > tolerance_s:
            raise CorpusError(
                f"{self.id}: audio {audio_s:.3f}s vs EMA "
                f"{self.ema.duration_s:.3f}s exceeds {tolerance_s*1000:.0f} ms")


@dataclass
class ManifestEntry:
    id: str
    speaker_id: str
    path: str = None


@dataclass
class CorpusManifest:
    name: str
    speakers: list
    utterances: list                      # ManifestEntry
    root: str = None
    _loaded: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        ids = [u.id for u in self.utterances]
        if len(ids) != len(set(ids)):
            raise CorpusError("duplicate utterance ids in manifest")
        unknown = {u.speaker_id for u in self.utterances} - set(self.speakers)
        if unknown:
            raise CorpusError(f"utterance speakers not in manifest: {unknown}")

    def entry(self, utt_id):
        for u in self.utterances:
            if u.id == utt_id:
                return u
        raise KeyError(utt_id)

    def load(self, utt_id):
        if utt_id in self._loaded:
            return self._loaded[utt_id]
        entry = self.entry(utt_id)
        if entry.path is None:
            raise CorpusError(f"{utt_id}: no path and not preloaded")
        path = entry.path if self.root is None else os.path.join(self.root, entry.path)
        utt = read_interchange(path)
        self._loaded[utt_id] = utt
        return utt

    def ids(self):
        return [u.id for u in self.utterances]

    def ids_for_speaker(self, speaker_id):
        return [u.id for u in self.utterances if u.speaker_id == speaker_id]


@dataclass
class ScenarioSpec:
    kind: str
    dataset: str
    seed: int
    target_speaker: str = None

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise CorpusError(f"unknown scenario {self.kind!r}")


@dataclass
class SplitAssignment:
    train: list
    validation: list
    fine_tune: list
    test: list

    def __post_init__(self):
        groups = [self.train, self.validation, self.fine_tune, self.test]
        seen = set()
        for group in groups:
            dup = seen & set(group)
            if dup:
                raise CorpusError(f"split groups overlap on {sorted(dup)}")
            seen |= set(group)


# ---- EST track files -----------------------------------------------------

def parse_est_track(raw_bytes):
    """Parse an EST ``Track`` file (binary or ascii payload).

    Returns an :class:`EmaTrajectory` with channels, rate, and data exactly
    as declared in the header.
    """
    sep = b"EST_Header_End\n"
    split = raw_bytes.find(sep)
    if split < 0:
        raise EstParseError("missing EST_Header_End")
    header_lines = raw_bytes[:split].decode("ascii", errors="replace").splitlines()
    if not header_lines or header_lines[0].strip() != "EST_File Track":
        raise EstParseError("expected 'EST_File Track' sentinel", line=1)

    fields = {}
    channel_names = {}
    for lineno, line in enumerate(header_lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise EstParseError(f"malformed header field {line!r}", line=lineno)
        key, value = parts[0], parts[1].strip()
        if key.startswith("Channel_"):
            try:
                channel_names[int(key[len("Channel_"):])] = value
            except ValueError:
                raise EstParseError(f"bad channel index in {key!r}", line=lineno)
        else:
            fields[key] = value

    def need(key):
        if key not in fields:
            raise EstParseError(f"missing required header field {key!r}")
        return fields[key]

    try:
        n_frames = int(need("NumFrames"))
        n_channels = int(need("NumChannels"))
    except ValueError as exc:
        raise EstParseError(str(exc))
    data_type = need("DataType").lower()
    equal_space = fields.get("EqualSpace", "false").lower() in ("t", "true", "1")
    breaks = fields.get("BreaksPresent", "false").lower() in ("t", "true", "1")

    channels = [channel_names.get(i, f"ch{i}") for i in range(n_channels)]
    extra = (0 if equal_space else 1) + (1 if breaks else 0)
    n_cols = extra + n_channels
    expected = n_frames * n_cols

    payload = raw_bytes[split + len(sep):]
    if data_type == "binary":
        order = "<" if fields.get("ByteOrder", "01") == "01" else ">"
        if len(payload) < 4 * expected:
            raise PayloadLengthError(
                f"payload holds {len(payload) // (4 * n_cols)} frames, "
                f"header declares {n_frames}")
        flat = np.frombuffer(payload[:4 * expected], dtype=order + "f4")
        table = flat.astype("<f4").reshape(n_frames, n_cols)
    elif data_type == "ascii":
        values = payload.split()
        if len(values) < expected:
            raise PayloadLengthError(
                f"payload holds {len(values)} values, expected {expected}")
        table = np.array(values[:expected], dtype="<f4").reshape(n_frames, n_cols)
    else:
        raise EstParseError(f"unsupported DataType {data_type!r}")

    if equal_space:
        if "FrameShift" in fields:
            rate = 1.0 / float(fields["FrameShift"])
        elif "SampleRate" in fields:
            rate = float(fields["SampleRate"])
        else:
            raise EstParseError("EqualSpace track needs FrameShift or SampleRate")
    else:
        times = table[:, 0].astype(np.float64)
        if n_frames > 1:
            rate = 1.0 / float(np.median(np.diff(times)))
        else:
            rate = float(fields.get("SampleRate", 1.0))

    data = np.ascontiguousarray(table[:, extra:])
    return EmaTrajectory(channels=channels, rate_hz=rate, data=data)


def write_est_track(ema, path=None):
    """Emit a binary little-endian EST Track for a trajectory.

    ``parse_est_track`` of the emitted bytes reproduces (channels, rate,
    data) exactly.
    """
    lines = [
        "EST_File Track",
        "DataType binary",
        "ByteOrder 01",
        f"NumFrames {ema.n_frames}",
        f"NumChannels {len(ema.channels)}",
        "EqualSpace true",
        "BreaksPresent false",
        f"FrameShift {1.0 / ema.rate_hz!r}",
    ]
    for i, name in enumerate(ema.channels):
        lines.append(f"Channel_{i} {name}")
    lines.append("EST_Header_End\n")
    blob = "\n".join(lines).encode("ascii")
    blob += np.ascontiguousarray(ema.data, dtype="<f4").tobytes()
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(blob)
    return blob


def apply_channel_map(ema, name_map):
    """Rename raw corpus channels to canonical names via ``name_map``."""
    channels = [name_map.get(c, c) for c in ema.channels]
    return EmaTrajectory(channels=channels, rate_hz=ema.rate_hz,
                         data=ema.data, nan_mask=ema.nan_mask)


def clean_trajectory(ema, max_gap=5):
    """Linearly interpolate NaN runs of at most ``max_gap`` frames.

    Longer dropouts make the utterance unusable and raise
    :class:`DropUtterance`.
    """
    data = ema.data.astype(np.float32, copy=True)
    for c in range(data.shape[1]):
        col = data[:, c]
        bad = np.isnan(col)
        if not bad.any():
            continue
        if bad.all():
            raise DropUtterance(f"channel {ema.channels[c]}: all samples missing")
        runs = np.diff(np.concatenate([[0], bad.astype(int), [0]]))
        starts = np.flatnonzero(runs == 1)
        ends = np.flatnonzero(runs == -1)
        if np.max(ends - starts) > max_gap:
            raise DropUtterance(
                f"channel {ema.channels[c]}: NaN run of "
                f"{int(np.max(ends - starts))} frames exceeds {max_gap}")
        good = ~bad
        idx = np.arange(len(col))
        col[bad] = np.interp(idx[bad], idx[good], col[good])
        data[:, c] = col
    return EmaTrajectory(channels=list(ema.channels), rate_hz=ema.rate_hz,
                         data=data)


def select_channels(ema):
    """Split a canonical trajectory into (lip T×6, tongue T×6) blocks."""
    missing = [c for c in CANONICAL_CHANNELS if c not in ema.channels]
    if missing:
        raise ChannelMapError(missing)
    lip = np.stack([ema.data[:, ema.channels.index(c)] for c in LIP_CHANNELS], axis=1)
    tongue = np.stack([ema.data[:, ema.channels.index(c)] for c in TONGUE_CHANNELS],
                      axis=1)
    return lip, tongue


# ---- interchange format --------------------------------------------------

def write_interchange(utterance, path):
    audio = np.ascontiguousarray(utterance.audio, dtype="<f4")
    ema_data = np.ascontiguousarray(utterance.ema.data, dtype="<f4")
    payload = audio.tobytes() + ema_data.tobytes()
    lines = [
        f"{INTERCHANGE_MAGIC} {INTERCHANGE_VERSION}",
        f"id {utterance.id}",
        f"speaker {utterance.speaker_id}",
        f"audio_rate {utterance.audio_rate_hz!r}",
        f"ema_rate {utterance.ema.rate_hz!r}",
        f"channels {','.join(utterance.ema.channels)}",
        f"n_samples {len(audio)}",
        f"n_frames {ema_data.shape[0]}",
        f"checksum {zlib.crc32(payload):08x}",
        "end_header\n",
    ]
    with open(path, "wb") as fh:
        fh.write("\n".join(lines).encode())
        fh.write(payload)


def read_interchange(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"end_header\n")
    if end < 0:
        raise CorpusError(f"{path}: missing end_header")
    fields = {}
    lines = raw[:end].decode().splitlines()
    magic, _, version = lines[0].partition(" ")
    if magic != INTERCHANGE_MAGIC:
        raise CorpusError(f"{path}: not an interchange file")
    if int(version) != INTERCHANGE_VERSION:
        raise SchemaVersionError(
            f"{path}: schema_version {version}, expected {INTERCHANGE_VERSION}")
    for line in lines[1:]:
        key, _, value = line.partition(" ")
        fields[key] = value
    payload = raw[end + len(b"end_header\n"):]
    if f"{zlib.crc32(payload):08x}" != fields["checksum"]:
        raise ChecksumError(f"{path}: checksum mismatch")
    n_samples = int(fields["n_samples"])
    n_frames = int(fields["n_frames"])
    channels = fields["channels"].split(",") if fields["channels"] else []
    audio = np.frombuffer(payload[:4 * n_samples], dtype="<f4").copy()
    ema_data = np.frombuffer(payload[4 * n_samples:], dtype="<f4")
    ema_data = ema_data.reshape(n_frames, len(channels)).copy()
    ema = EmaTrajectory(channels=channels, rate_hz=float(fields["ema_rate"]),
                        data=ema_data)
    return Utterance(id=fields["id"], speaker_id=fields["speaker"],
                     audio=audio, audio_rate_hz=float(fields["audio_rate"]),
                     ema=ema)


def write_manifest(manifest, path):
    lines = [f"corpus {manifest.name}"]
    for entry in manifest.utterances:
        lines.append(f"utterance {entry.id} {entry.speaker_id} {entry.path}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    entries = []
    name = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, rest = line.partition(" ")
            if key == "corpus":
                name = rest
            elif key == "utterance":
                utt_id, speaker, rel = rest.split()
                entries.append(ManifestEntry(utt_id, speaker, rel))
    if name is None:
        raise CorpusError(f"{path}: missing corpus name line")
    speakers = sorted({e.speaker_id for e in entries})
    return CorpusManifest(name=name, speakers=speakers, utterances=entries,
                          root=os.path.dirname(os.path.abspath(path)))


# ---- scenario splits -----------------------------------------------------

def _cut(ids, fractions, rng):
    """Shuffle then cut into groups; floored sizes, remainder to the first."""
    ids = sorted(ids)
    rng.shuffle(ids)
    sizes = [int(np.floor(f * len(ids))) for f in fractions[1:]]
    head = len(ids) - sum(sizes)
    groups = [ids[:head]]
    offset = head
    for size in sizes:
        groups.append(ids[offset:offset + size])
        offset += size
    return groups


def make_splits(manifest, scenario):
    """Build the train/validation/fine-tune/test assignment for a scenario.

    Deterministic given ``scenario.seed``: utterance ids are sorted, then
    shuffled with a seeded generator before the proportional cut.
    """
    rng = np.random.default_rng(scenario.seed)
    kind = scenario.kind
    target = scenario.target_speaker

    if kind in ("S3", "S4"):
        if target is None:
            raise CorpusError(f"{kind} requires a target_speaker")
        if target not in manifest.speakers:
            raise CorpusError(f"target speaker {target!r} not in manifest")

    if kind == "S1":
        if len(manifest.speakers) == 1:
            ids = manifest.ids()
        elif target is not None:
            if target not in manifest.speakers:
                raise CorpusError(f"target speaker {target!r} not in manifest")
            ids = manifest.ids_for_speaker(target)
        else:
            raise CorpusError(
                "S1 on a multi-speaker manifest needs a target_speaker")
        train, val, test = _cut(ids, (0.8, 0.1, 0.1), rng)
        return SplitAssignment(train=train, validation=val, fine_tune=[], test=test)

    if kind == "S2":
        train, val, test = [], [], []
        for speaker in sorted(manifest.speakers):
            tr, va, te = _cut(manifest.ids_for_speaker(speaker),
                              (0.8, 0.1, 0.1), rng)
            train += tr
            val += va
            test += te
        return SplitAssignment(train=train, validation=val, fine_tune=[], test=test)

    if kind == "S3":
        train, val = [], []
        for speaker in sorted(manifest.speakers):
            if speaker == target:
                continue
            tr, va = _cut(manifest.ids_for_speaker(speaker), (0.8, 0.2), rng)
            train += tr
            val += va
        fine, test = _cut(manifest.ids_for_speaker(target), (0.8, 0.2), rng)
        return SplitAssignment(train=train, validation=val, fine_tune=fine, test=test)

    # S4: held-out target speaker contributes test data only
    train, val = [], []
    for speaker in sorted(manifest.speakers):
        if speaker == target:
            continue
        tr, va = _cut(manifest.ids_for_speaker(speaker), (0.8, 0.2), rng)
        train += tr
        val += va
    return SplitAssignment(train=train, validation=val, fine_tune=[],
                           test=sorted(manifest.ids_for_speaker(target)))


# ---- synthetic corpus ----------------------------------------------------

@dataclass
class SynthConfig:
    """Generative process for the desk-scale verification corpus.

    Each utterance is a random phone sequence; every phone has a fixed
    12-channel articulator target vector (shared across speakers) smoothed
    by a low-pass kernel, and a pair of formant frequencies. Audio is a sum
    of sinusoids at those formants, scaled per speaker by a formant-shift
    factor and a spectral tilt, so articulation is speaker-invariant while
    audio is speaker-colored.
    """
    version: int = 1
    n_speakers: int = 4
    n_utterances: int = 200           # total across speakers
    n_phones: int = 8
    min_segments: int = 3
    max_segments: int = 6
    min_frames_per_segment: int = 8
    max_frames_per_segment: int = 14
    frame_rate_hz: float = 100.0
    audio_rate_hz: float = 16000.0
    smoothing_kernel: int = 9
    target_scale_mm: float = 8.0
    speaker_shift_scale: float = 0.3
    shared_phone_sequences: bool = False
    name: str = "synthetic"


def _smooth(targets, kernel_len):
    window = np.hamming(kernel_len)
    window /= window.sum()
    pad = kernel_len // 2
    out = np.empty_like(targets)
    for c in range(targets.shape[1]):
        col = np.pad(targets[:, c], pad, mode="edge")
        out[:, c] = np.convolve(col, window, mode="valid")
    return out


def _speaker_factors(cfg, s):
    if cfg.n_speakers == 1:
        return 1.0, 0.6
    frac = s / (cfg.n_speakers - 1)
    shift = 1.0 + cfg.speaker_shift_scale * (frac - 0.5)
    tilt = 0.3 + 0.6 * frac
    return shift, tilt


def synth_corpus(config, seed, phone_sequences=None):
    """Generate a deterministic parallel corpus; returns a preloaded manifest.

    ``phone_sequences`` overrides the random per-utterance sequences (used
    to build controlled fixtures).
    """
    cfg = config
    if cfg.n_speakers < 1 or cfg.n_utterances < 1:
        raise CorpusError("need at least one speaker and one utterance")
    if cfg.n_phones < 2:
        raise CorpusError("phone inventory must have at least 2 phones")

    inv_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    targets = inv_rng.uniform(-cfg.target_scale_mm, cfg.target_scale_mm,
                              size=(cfg.n_phones, 12)).astype(np.float32)
    f1 = np.linspace(300.0, 850.0, cfg.n_phones)
    f2 = np.linspace(950.0, 2400.0, cfg.n_phones)

    per_speaker = cfg.n_utterances // cfg.n_speakers
    counts = [per_speaker + (1 if s < cfg.n_utterances % cfg.n_speakers else 0)
              for s in range(cfg.n_speakers)]
    samples_per_frame = int(round(cfg.audio_rate_hz / cfg.frame_rate_hz))

    entries, loaded = [], {}
    speakers = [f"SP{s:02d}" for s in range(cfg.n_speakers)]
    for s, speaker in enumerate(speakers):
        shift, tilt = _speaker_factors(cfg, s)
        for u in range(counts[s]):
            utt_id = f"{speaker}_u{u:04d}"
            if phone_sequences is not None:
                phone_seq = np.asarray(phone_sequences[u], dtype=int)
            else:
                key = [seed, 1, u] if cfg.shared_phone_sequences else [seed, 1, s, u]
                rng = np.random.default_rng(np.random.SeedSequence(key))
                n_seg = int(rng.integers(cfg.min_segments, cfg.max_segments + 1))
                phones = rng.integers(0, cfg.n_phones, size=n_seg)
                durs = rng.integers(cfg.min_frames_per_segment,
                                    cfg.max_frames_per_segment + 1, size=n_seg)
                phone_seq = np.repeat(phones, durs)

            ema_data = _smooth(targets[phone_seq], cfg.smoothing_kernel)
            ema = EmaTrajectory(channels=list(CANONICAL_CHANNELS),
                                rate_hz=cfg.frame_rate_hz, data=ema_data)

            freqs1 = np.repeat(f1[phone_seq] * shift, samples_per_frame)
            freqs2 = np.repeat(f2[phone_seq] * shift, samples_per_frame)
            phase1 = np.cumsum(2.0 * np.pi * freqs1 / cfg.audio_rate_hz)
            phase2 = np.cumsum(2.0 * np.pi * freqs2 / cfg.audio_rate_hz)
            audio = (0.25 * np.sin(phase1) +
                     0.25 * tilt * np.sin(phase2)).astype(np.float32)

            utt = Utterance(id=utt_id, speaker_id=speaker, audio=audio,
                            audio_rate_hz=cfg.audio_rate_hz, ema=ema,
                            meta={"phone_seq": phone_seq,
                                  "raw_targets": targets[phone_seq]})
            utt.check_durations()
            entries.append(ManifestEntry(utt_id, speaker))
            loaded[utt_id] = utt

    return CorpusManifest(name=cfg.name, speakers=speakers, utterances=entries,
                          _loaded=loaded)


def save_corpus(manifest, out_dir):
    """Write a preloaded corpus to disk as interchange files + manifest."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for entry in manifest.utterances:
        utt = manifest.load(entry.id)
        rel = f"{entry.id}.utt"
        write_interchange(utt, os.path.join(out_dir, rel))
        entries.append(ManifestEntry(entry.id, entry.speaker_id, rel))
    disk = CorpusManifest(name=manifest.name, speakers=list(manifest.speakers),
                          utterances=entries, root=out_dir)
    write_manifest(disk, os.path.join(out_dir, "manifest.txt"))
    return disk
