import numpy as np
import pytest

from gesturegen.synthetic import SynthSpec, gen_corpus
from gesturegen.wav import AudioBuffer


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tone(freq, seconds=1.0, sr=16000, amp=0.5):
    t = np.arange(int(round(seconds * sr))) / sr
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), sr)


def sawtooth(freq, seconds=1.0, sr=16000, amp=0.5):
    t = np.arange(int(round(seconds * sr))) / sr
    return AudioBuffer(amp * (2.0 * ((t * freq) % 1.0) - 1.0), sr)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """12-utterance synthetic corpus split 8/2/2."""
    root = tmp_path_factory.mktemp("corpus")
    gen_corpus(SynthSpec(n_utterances=12, n_train=8, n_val=2, n_test=2, seed=7), root)
    return root
