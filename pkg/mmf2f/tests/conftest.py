import numpy as np
import pytest

from ..turntaking.bundle import init_bundle
from ..turntaking.config import ModelConfig
from ..turntaking.dataset import Sample, build_dataset
from ..turntaking.encoders import AudioInput, TextInput, VideoInput, Vocabulary
from ..turntaking.models import Action, Conversation, Utterance, WordFrame
from ..turntaking.numeric import make_rng
from ..turntaking.synthetic import SyntheticConfig, gen_synthetic, synthetic_vocabulary

WIDTH = 3


def make_sample(rng, label=Action.TURN, n_tokens=3, n_audio=5, n_video=4, vocab_size=5,
                text=True, audio=True, video=True, utt_id="u0"):
    """A hand-built sample with random raw inputs of width WIDTH."""
    ids = tuple(int(i) for i in rng.integers(0, vocab_size, size=n_tokens))
    return Sample(
        utt_id, n_tokens - 1, tuple(f"t{i}" for i in ids),
        TextInput(ids) if text else None,
        AudioInput(rng.normal(size=(n_audio, WIDTH))) if audio else None,
        VideoInput(rng.normal(size=(n_video, WIDTH))) if video else None,
        label,
    )


def make_utterance(utt_id, speaker, words, start, step=0.2, labels=None):
    frames = []
    for i, w in enumerate(words):
        label = None if labels is None else labels[i]
        frames.append(WordFrame(w, start + i * step, start + (i + 1) * step, speaker, label))
    return Utterance(utt_id, speaker, frames)


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def tiny_vocab():
    return Vocabulary.build(["hello", "there", "yeah", "ok"])


@pytest.fixture
def tiny_config(tiny_vocab):
    return ModelConfig.synthetic(tiny_vocab.size, audio_dim=WIDTH, video_dim=WIDTH, width=4,
                                 hidden_dim=5, text_embed_dim=3, rank=2, head_sizes=(4, 4, 3),
                                 unimodal_head_sizes=(4, 4, 3), n_video_frames=4)


@pytest.fixture
def tiny_bundle(tiny_config, tiny_vocab):
    return init_bundle(tiny_config, tiny_vocab, seed=7)


@pytest.fixture
def tiny_sample(rng):
    return make_sample(rng)


@pytest.fixture
def two_speaker_conversation():
    a = make_utterance("a0", "spk_a", ["so", "how", "are", "you", "doing"], 0.0)
    b = make_utterance("b0", "spk_b", ["yeah"], 0.3)
    return Conversation("c0", [a, b])


@pytest.fixture
def synth_cfg():
    return SyntheticConfig(n_words=300, seed=5)


@pytest.fixture
def synth_manifest(synth_cfg):
    manifest, _ = gen_synthetic(synth_cfg)
    return manifest


@pytest.fixture
def synth_samples(synth_cfg, synth_manifest):
    return build_dataset(synth_manifest.conversations, synth_cfg.n_video_frames,
                         synthetic_vocabulary(synth_cfg))


@pytest.fixture
def synth_model_config(synth_cfg):
    vocab = synthetic_vocabulary(synth_cfg)
    return ModelConfig.synthetic(vocab.size, synth_cfg.audio_dim, synth_cfg.video_dim, width=8,
                                 hidden_dim=8, text_embed_dim=4, rank=2, head_sizes=(8, 6, 3),
                                 unimodal_head_sizes=(8, 6, 3), n_video_frames=synth_cfg.n_video_frames)


@pytest.fixture
def synth_bundle(synth_cfg, synth_model_config):
    return init_bundle(synth_model_config, synthetic_vocabulary(synth_cfg), seed=11)
