import matplotlib
matplotlib.use("Agg")

import numpy as np
import pytest

from artinv.corpus import SynthConfig, synth_corpus


@pytest.fixture(scope="session")
def tiny_manifest():
    """Two speakers, 24 short utterances; enough for split/training tests."""
    cfg = SynthConfig(n_speakers=2, n_utterances=24)
    return synth_corpus(cfg, seed=11)


@pytest.fixture(scope="session")
def quad_manifest():
    """Four speakers, 48 utterances; used where S2-S4 need >2 speakers."""
    cfg = SynthConfig(n_speakers=4, n_utterances=48)
    return synth_corpus(cfg, seed=12)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
