"""Corpus ingestion, interchange files, splits, and the synthetic corpus."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artinv.corpus import (CANONICAL_CHANNELS, ChannelMapError, ChecksumError,
                           CorpusError, CorpusManifest, DropUtterance,
                           EmaTrajectory, EstParseError, ManifestEntry,
                           PayloadLengthError, ScenarioSpec, SplitAssignment,
                           SynthConfig, Utterance, apply_channel_map,
                           clean_trajectory, make_splits, parse_est_track,
                           read_interchange, read_manifest, select_channels,
                           synth_corpus, write_est_track, write_interchange,
                           write_manifest)

# ---- EST track parsing ---------------------------------------------------


def est_bytes(header_lines, payload=b""):
    return ("\n".join(header_lines) + "\nEST_Header_End\n").encode() + payload


BASE_HEADER = [
    "EST_File Track",
    "DataType binary",
    "ByteOrder 01",
    "NumFrames 3",
    "NumChannels 2",
    "EqualSpace true",
    "BreaksPresent false",
    "FrameShift 0.01",
    "Channel_0 ULx",
    "Channel_1 ULz",
]


def test_parse_binary_le_track():
    values = [1.5, -2.0, 0.25, 4.0, -0.5, 3.0]
    payload = struct.pack("<6f", *values)
    ema = parse_est_track(est_bytes(BASE_HEADER, payload))
    assert ema.channels == ["ULx", "ULz"]
    assert ema.rate_hz == pytest.approx(100.0)
    assert np.array_equal(ema.data, np.array(values, "f4").reshape(3, 2))


def test_parse_binary_be_track():
    values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    header = [l if l != "ByteOrder 01" else "ByteOrder 10" for l in BASE_HEADER]
    ema = parse_est_track(est_bytes(header, struct.pack(">6f", *values)))
    assert np.array_equal(ema.data, np.array(values, "f4").reshape(3, 2))


def test_parse_ascii_track_with_time_column():
    header = [
        "EST_File Track",
        "DataType ascii",
        "NumFrames 3",
        "NumChannels 1",
        "EqualSpace false",
        "BreaksPresent false",
        "Channel_0 T1x",
    ]
    payload = b"0.00 10.0\n0.02 11.0\n0.04 12.0\n"
    ema = parse_est_track(est_bytes(header, payload))
    assert ema.rate_hz == pytest.approx(50.0)
    assert np.array_equal(ema.data[:, 0], np.array([10.0, 11.0, 12.0], "f4"))


def test_parse_rejects_missing_sentinel():
    bad = est_bytes(["EST_File Wave"] + BASE_HEADER[1:], b"\0" * 24)
    with pytest.raises(EstParseError):
        parse_est_track(bad)


def test_parse_rejects_short_payload():
    with pytest.raises(PayloadLengthError):
        parse_est_track(est_bytes(BASE_HEADER, struct.pack("<4f", 1, 2, 3, 4)))


def test_parse_rejects_unknown_datatype():
    header = [l if not l.startswith("DataType") else "DataType runlength"
              for l in BASE_HEADER]
    with pytest.raises(EstParseError):
        parse_est_track(est_bytes(header, b"\0" * 24))


def test_est_round_trip_exact(rng):
    ema = EmaTrajectory(channels=list(CANONICAL_CHANNELS), rate_hz=200.0,
                        data=rng.standard_normal((17, 12)).astype("f4"))
    back = parse_est_track(write_est_track(ema))
    assert back.channels == list(ema.channels)
    assert back.rate_hz == pytest.approx(ema.rate_hz)
    assert np.array_equal(back.data, ema.data)


# ---- cleaning and channel taxonomy ---------------------------------------


def test_clean_interpolates_short_gap():
    data = np.array([[0.0], [np.nan], [np.nan], [3.0], [4.0]], "f4")
    ema = EmaTrajectory(channels=["T1x"], rate_hz=100.0, data=data)
    cleaned = clean_trajectory(ema, max_gap=5)
    assert np.allclose(cleaned.data[:, 0], [0.0, 1.0, 2.0, 3.0, 4.0])


def test_clean_drops_long_gap():
    data = np.full((10, 1), np.nan, "f4")
    data[0] = 0.0
    data[-1] = 9.0
    ema = EmaTrajectory(channels=["T1x"], rate_hz=100.0, data=data)
    with pytest.raises(DropUtterance):
        clean_trajectory(ema, max_gap=5)


def test_clean_drops_all_nan_channel():
    ema = EmaTrajectory(channels=["T1x"], rate_hz=100.0,
                        data=np.full((4, 1), np.nan, "f4"))
    with pytest.raises(DropUtterance):
        clean_trajectory(ema)


def test_channel_map_and_selection(rng):
    raw_names = [f"raw{i}" for i in range(12)]
    name_map = dict(zip(raw_names, CANONICAL_CHANNELS))
    data = rng.standard_normal((6, 12)).astype("f4")
    ema = apply_channel_map(
        EmaTrajectory(channels=raw_names, rate_hz=100.0, data=data), name_map)
    assert ema.channels == list(CANONICAL_CHANNELS)
    lip, tongue = select_channels(ema)
    assert lip.shape == (6, 6) and tongue.shape == (6, 6)
    assert np.array_equal(lip, data[:, :6])
    assert np.array_equal(tongue, data[:, 6:])


def test_select_channels_reorders(rng):
    shuffled = list(CANONICAL_CHANNELS[::-1])
    data = rng.standard_normal((4, 12)).astype("f4")
    ema = EmaTrajectory(channels=shuffled, rate_hz=100.0, data=data)
    lip, _ = select_channels(ema)
    assert np.array_equal(lip[:, 0], data[:, shuffled.index("ULx")])


def test_select_channels_missing():
    ema = EmaTrajectory(channels=["ULx"], rate_hz=100.0,
                        data=np.zeros((3, 1), "f4"))
    with pytest.raises(ChannelMapError) as exc:
        select_channels(ema)
    assert "T1x" in str(exc.value)


# ---- interchange files ---------------------------------------------------


def make_utterance(rng, utt_id="u0", speaker="SP00", n_frames=20):
    ema = EmaTrajectory(channels=list(CANONICAL_CHANNELS), rate_hz=100.0,
                        data=rng.standard_normal((n_frames, 12)).astype("f4"))
    audio = rng.standard_normal(int(16000 * n_frames / 100.0)).astype("f4")
    return Utterance(id=utt_id, speaker_id=speaker, audio=audio,
                     audio_rate_hz=16000.0, ema=ema)


def test_interchange_round_trip(tmp_path, rng):
    utt = make_utterance(rng)
    path = tmp_path / "u0.utt"
    write_interchange(utt, path)
    back = read_interchange(path)
    assert back.id == utt.id and back.speaker_id == utt.speaker_id
    assert np.array_equal(back.audio, utt.audio.astype("f4"))
    assert np.array_equal(back.ema.data, utt.ema.data)
    assert back.ema.channels == list(utt.ema.channels)


def test_interchange_detects_corruption(tmp_path, rng):
    utt = make_utterance(rng)
    path = tmp_path / "u0.utt"
    write_interchange(utt, path)
    blob = bytearray(path.read_bytes())
    blob[-3] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        read_interchange(path)


def test_duration_check():
    rng = np.random.default_rng(0)
    utt = make_utterance(rng)
    utt.audio = utt.audio[: len(utt.audio) // 2]
    with pytest.raises(CorpusError):
        utt.check_durations()


def test_manifest_round_trip(tmp_path, rng):
    entries = []
    for i in range(4):
        utt = make_utterance(rng, f"u{i}", f"SP0{i % 2}")
        write_interchange(utt, tmp_path / f"u{i}.utt")
        entries.append(ManifestEntry(f"u{i}", f"SP0{i % 2}", f"u{i}.utt"))
    man = CorpusManifest(name="demo", speakers=["SP00", "SP01"],
                         utterances=entries, root=str(tmp_path))
    write_manifest(man, tmp_path / "manifest.txt")
    back = read_manifest(tmp_path / "manifest.txt")
    assert back.name == "demo"
    assert back.ids() == [f"u{i}" for i in range(4)]
    assert back.load("u2").speaker_id == "SP00"


def test_manifest_rejects_duplicates():
    entries = [ManifestEntry("u0", "SP00"), ManifestEntry("u0", "SP00")]
    with pytest.raises(CorpusError):
        CorpusManifest(name="x", speakers=["SP00"], utterances=entries)


def test_split_assignment_rejects_overlap():
    with pytest.raises(CorpusError):
        SplitAssignment(train=["a", "b"], validation=["b"], fine_tune=[],
                        test=[])


# ---- scenario splits (property tests) ------------------------------------


def random_manifest(n_speakers, per_speaker):
    entries = [ManifestEntry(f"SP{s:02d}_u{u:04d}", f"SP{s:02d}")
               for s in range(n_speakers) for u in range(per_speaker[s])]
    return CorpusManifest(name="prop", speakers=[f"SP{s:02d}"
                                                 for s in range(n_speakers)],
                          utterances=entries)


manifests = st.integers(2, 5).flatmap(
    lambda n: st.tuples(
        st.just(n),
        st.lists(st.integers(10, 40), min_size=n, max_size=n)))


def check_partition(splits, ids):
    groups = [splits.train, splits.validation, splits.fine_tune, splits.test]
    joined = sum(groups, [])
    assert sorted(joined) == sorted(ids)
    assert len(joined) == len(set(joined))


@settings(max_examples=25, deadline=None)
@given(manifests, st.integers(0, 2 ** 16))
def test_s1_splits(spec, seed):
    n, per = spec
    man = random_manifest(n, per)
    scenario = ScenarioSpec(kind="S1", dataset="prop", seed=seed,
                            target_speaker="SP00")
    splits = make_splits(man, scenario)
    ids = man.ids_for_speaker("SP00")
    check_partition(splits, ids)
    assert len(splits.validation) == len(ids) // 10
    assert len(splits.test) == len(ids) // 10
    assert splits.fine_tune == []


@settings(max_examples=25, deadline=None)
@given(manifests, st.integers(0, 2 ** 16))
def test_s2_splits(spec, seed):
    n, per = spec
    man = random_manifest(n, per)
    splits = make_splits(man, ScenarioSpec(kind="S2", dataset="prop",
                                           seed=seed))
    check_partition(splits, man.ids())
    for s in man.speakers:
        ids = set(man.ids_for_speaker(s))
        assert len(ids & set(splits.validation)) == len(ids) // 10
        assert len(ids & set(splits.test)) == len(ids) // 10


@settings(max_examples=25, deadline=None)
@given(manifests, st.integers(0, 2 ** 16))
def test_s3_splits(spec, seed):
    n, per = spec
    man = random_manifest(n, per)
    target = "SP01"
    splits = make_splits(man, ScenarioSpec(kind="S3", dataset="prop",
                                           seed=seed, target_speaker=target))
    check_partition(splits, man.ids())
    target_ids = set(man.ids_for_speaker(target))
    assert set(splits.fine_tune) | set(splits.test) == target_ids
    assert not target_ids & (set(splits.train) | set(splits.validation))
    assert len(splits.test) == len(target_ids) // 5


@settings(max_examples=25, deadline=None)
@given(manifests, st.integers(0, 2 ** 16))
def test_s4_splits(spec, seed):
    n, per = spec
    man = random_manifest(n, per)
    target = "SP00"
    splits = make_splits(man, ScenarioSpec(kind="S4", dataset="prop",
                                           seed=seed, target_speaker=target))
    check_partition(splits, man.ids())
    assert sorted(splits.test) == sorted(man.ids_for_speaker(target))
    assert not set(man.ids_for_speaker(target)) & set(splits.train)


def test_splits_deterministic():
    man = random_manifest(3, [20, 20, 20])
    spec = ScenarioSpec(kind="S2", dataset="prop", seed=7)
    a, b = make_splits(man, spec), make_splits(man, spec)
    assert a.train == b.train and a.test == b.test
    other = make_splits(man, ScenarioSpec(kind="S2", dataset="prop", seed=8))
    assert a.train != other.train


def test_s4_requires_target():
    man = random_manifest(2, [10, 10])
    with pytest.raises(CorpusError):
        make_splits(man, ScenarioSpec(kind="S4", dataset="prop", seed=0))


# ---- synthetic corpus ----------------------------------------------------


def test_synth_deterministic():
    cfg = SynthConfig(n_speakers=2, n_utterances=8)
    a = synth_corpus(cfg, seed=5)
    b = synth_corpus(cfg, seed=5)
    for utt_id in a.ids():
        ua, ub = a.load(utt_id), b.load(utt_id)
        assert np.array_equal(ua.audio, ub.audio)
        assert np.array_equal(ua.ema.data, ub.ema.data)
    c = synth_corpus(cfg, seed=6)
    assert not np.array_equal(a.load(a.ids()[0]).audio,
                              c.load(c.ids()[0]).audio)


def test_synth_basic_shape(tiny_manifest):
    man = tiny_manifest
    assert sorted(man.speakers) == ["SP00", "SP01"]
    assert len(man.ids()) == 24
    utt = man.load(man.ids()[0])
    assert utt.ema.channels == list(CANONICAL_CHANNELS)
    utt.check_durations()
    assert np.isfinite(utt.audio).all() and np.isfinite(utt.ema.data).all()


def test_synth_articulation_is_speaker_invariant():
    """Same phone sequence yields identical EMA targets across speakers."""
    cfg = SynthConfig(n_speakers=2, n_utterances=8,
                      shared_phone_sequences=True)
    man = synth_corpus(cfg, seed=3)
    a_ids = man.ids_for_speaker("SP00")
    b_ids = man.ids_for_speaker("SP01")
    for ia, ib in zip(a_ids, b_ids):
        ua, ub = man.load(ia), man.load(ib)
        assert np.array_equal(ua.meta["phone_seq"], ub.meta["phone_seq"])
        assert np.allclose(ua.meta["raw_targets"], ub.meta["raw_targets"])
        assert not np.array_equal(ua.audio, ub.audio)  # audio is colored
