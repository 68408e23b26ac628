# synthetic.py

"""
Synthetic two-speaker conversations with a known generative process, and the
exact Bayes posterior under that process.

Every word draws its action from the class priors. The floor holder speaks
until a TURN; a BACKCHANNEL is a one-word listener utterance in a pause of the
holder's speech. Each modality independently carries a class cue
with the configured probability: a cue token of the word's class (text) or a
class-mean offset (audio/video). Without a cue the modality emits neutral
signal: a non-cue token or zero-mean noise.
"""

import json
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .dataset import Manifest, ManifestHeader, Sample
from .encoders import Vocabulary
from .models import (ACTIONS, Action, ActionDistribution, ConfigError, Conversation, DataError,
                     Modality, ModalityMask, NumericError, Utterance, WordFrame)
from .numeric import make_rng

logger = logging.getLogger(__name__)

SPEAKERS = ("spk_a", "spk_b")


@dataclass(frozen=True)
class SyntheticConfig:
    """
    Generator settings.

    Attributes:
        priors: Class priors for KEEP, TURN, BACKCHANNEL
        vocab_size: Number of distinct tokens
        cue_tokens_per_class: Tokens reserved as cues for each class
        audio_dim: Audio frame width
        video_dim: Video frame width
        mean_scale: Length of the class-mean vectors (orthogonal directions)
        noise_sigma: Per-coordinate Gaussian noise
        cue_probability: Per-modality probability (T, A, V) that a word carries a class cue
        n_words: Generate utterances until at least this many word frames exist
        utterances_per_conversation: Floor-holder utterances per conversation
        audio_frames_per_word: Identical audio frames written per word
        video_frames_per_word: Identical video frames written per word; when equal to
            n_video_frames a video input covers exactly the current word
        audio_frame_rate: Audio frames per second (fixes word duration)
        n_video_frames: Frames per video input (n)
        seed: Generator seed
    """
    priors: Tuple[float, float, float] = (0.7, 0.2, 0.1)
    vocab_size: int = 50
    cue_tokens_per_class: int = 8
    audio_dim: int = 16
    video_dim: int = 16
    mean_scale: float = 2.0
    noise_sigma: float = 1.0
    cue_probability: Tuple[float, float, float] = (0.6, 0.6, 0.6)
    n_words: int = 10_000
    utterances_per_conversation: int = 8
    audio_frames_per_word: int = 1
    video_frames_per_word: int = 16
    audio_frame_rate: float = 5.0
    n_video_frames: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "priors", tuple(float(p) for p in self.priors))
        cue = self.cue_probability
        if np.isscalar(cue):
            cue = (cue, cue, cue)
        object.__setattr__(self, "cue_probability", tuple(float(c) for c in cue))
        if len(self.priors) != 3 or min(self.priors) < 0 or abs(sum(self.priors) - 1.0) > 1e-9:
            raise ConfigError(f"Priors must be three non-negative numbers summing to 1, got {self.priors}")
        if len(self.cue_probability) != 3 or not all(0.0 <= c <= 1.0 for c in self.cue_probability):
            raise ConfigError(f"Cue probabilities must lie in [0, 1], got {self.cue_probability}")
        if self.cue_tokens_per_class < 1:
            raise ConfigError("Each class needs at least one cue token")
        if 3 * self.cue_tokens_per_class >= self.vocab_size:
            raise ConfigError(f"Vocabulary of {self.vocab_size} leaves no neutral tokens after "
                              f"{3 * self.cue_tokens_per_class} cue tokens")
        if min(self.audio_dim, self.video_dim) < 3:
            raise ConfigError("Audio and video widths must be at least 3 for orthogonal class means")
        if self.noise_sigma <= 0:
            raise ConfigError(f"Noise sigma must be positive, got {self.noise_sigma}")
        for name in ("n_words", "utterances_per_conversation", "audio_frames_per_word",
                     "video_frames_per_word", "n_video_frames"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def tokens(self) -> Tuple[str, ...]:
        width = len(str(self.vocab_size - 1))
        return tuple(f"w{i:0{width}d}" for i in range(self.vocab_size))

    def cue_tokens(self, action: Action) -> Tuple[str, ...]:
        start = int(action) * self.cue_tokens_per_class
        return self.tokens[start:start + self.cue_tokens_per_class]

    @property
    def neutral_tokens(self) -> Tuple[str, ...]:
        return self.tokens[3 * self.cue_tokens_per_class:]

    @property
    def backchannel_tokens(self) -> Tuple[str, ...]:
        """Every token a backchannel word can be spoken with."""
        return self.cue_tokens(Action.BACKCHANNEL) + self.neutral_tokens

    def class_mean(self, action: Action, dim: int) -> np.ndarray:
        mean = np.zeros(dim)
        mean[int(action)] = self.mean_scale
        return mean

    @property
    def word_seconds(self) -> float:
        return self.audio_frames_per_word / self.audio_frame_rate

    def header(self) -> ManifestHeader:
        return ManifestHeader(audio_dim=self.audio_dim, video_dim=self.video_dim,
                              n_video_frames=self.n_video_frames, audio_frame_rate=self.audio_frame_rate,
                              bc_vocab=self.backchannel_tokens)


def synthetic_vocabulary(cfg: SyntheticConfig) -> Vocabulary:
    return Vocabulary.build(cfg.tokens)


def _draw_signal(rng: np.random.Generator, cue: bool, mean: np.ndarray, sigma: float) -> np.ndarray:
    noise = sigma * rng.standard_normal(mean.shape[0])
    return mean + noise if cue else noise


@dataclass
class _Word:
    action: Action
    token: str
    cues: np.ndarray
    audio: np.ndarray
    video: np.ndarray


def _draw_word(rng: np.random.Generator, cfg: SyntheticConfig, cue_sets, neutral) -> _Word:
    action = Action(int(rng.choice(3, p=np.array(cfg.priors))))
    cues = rng.random(3) < np.array(cfg.cue_probability)
    if cues[0]:
        token = cue_sets[action][int(rng.integers(len(cue_sets[action])))]
    else:
        token = neutral[int(rng.integers(len(neutral)))]
    a_sig = _draw_signal(rng, bool(cues[1]), cfg.class_mean(action, cfg.audio_dim), cfg.noise_sigma)
    v_sig = _draw_signal(rng, bool(cues[2]), cfg.class_mean(action, cfg.video_dim), cfg.noise_sigma)
    return _Word(action, token, cues, a_sig, v_sig)


def _emit(utt_id: str, speaker: str, placed: Sequence[Tuple[int, _Word]], clock: float,
          cfg: SyntheticConfig) -> Tuple[Utterance, List[dict]]:
    """
    Lay out words at integer word slots after `clock`; skipped slots become silent audio.
    """
    d = cfg.word_seconds
    step = d / cfg.video_frames_per_word
    silence = np.zeros(cfg.audio_dim)
    words, audio, video_t, video_v, records = [], [], [], [], []
    prev = placed[0][0] - 1
    for i, (slot, w) in enumerate(placed):
        audio.extend([silence] * (cfg.audio_frames_per_word * (slot - prev - 1)))
        prev = slot
        start, end = clock + slot * d, clock + (slot + 1) * d
        words.append(WordFrame(w.token, start, end, speaker, w.action))
        audio.extend([w.audio] * cfg.audio_frames_per_word)
        for j in range(cfg.video_frames_per_word):
            video_t.append(start + (j + 0.5) * step)
            video_v.append(w.video)
        records.append({
            "utt_id": utt_id, "word_idx": i, "label": w.action.name, "token": w.token,
            "text_cue": bool(w.cues[0]), "audio_cue": bool(w.cues[1]), "video_cue": bool(w.cues[2]),
            "audio_signal": [float(v) for v in w.audio], "video_signal": [float(v) for v in w.video],
        })
    utt = Utterance(utt_id, speaker, words, np.array(audio), cfg.audio_frame_rate,
                    np.array(video_t), np.array(video_v))
    return utt, records


def gen_synthetic(cfg: SyntheticConfig) -> Tuple[Manifest, List[dict]]:
    """
    Generate a labeled manifest and the hidden record of every latent choice.

    KEEP and TURN words belong to the floor holder, whose utterance runs until its
    TURN. A BACKCHANNEL word is a one-word utterance by the listener, placed in a
    pause between two of the holder's words, so it overlaps the holder's utterance
    and nothing else does. A backchannel drawn before the holder's first word waits
    for the next pause; a conversation continues past its utterance count until no
    backchannel is waiting. Labeling the manifest with `cfg.backchannel_tokens`
    reproduces every generated label.

    Returns:
        (manifest, hidden records) where each hidden record describes one word frame,
        in manifest order
    """
    rng = make_rng(cfg.seed)
    cue_sets = {a: cfg.cue_tokens(a) for a in ACTIONS}
    neutral = cfg.neutral_tokens
    conversations = []
    hidden = []
    total = 0
    conv_index = 0
    while total < cfg.n_words:
        conv_id = f"c{conv_index:05d}"
        utterances = []
        clock = 0.0
        turn = 0
        waiting: List[_Word] = []
        while turn < cfg.utterances_per_conversation or waiting:
            if total >= cfg.n_words and not waiting:
                break
            speaker, listener = SPEAKERS[turn % 2], SPEAKERS[(turn + 1) % 2]
            holder: List[Tuple[int, _Word]] = []
            listener_words: List[Tuple[int, _Word]] = []
            slot = 0
            while True:
                w = _draw_word(rng, cfg, cue_sets, neutral)
                total += 1
                if w.action is Action.BACKCHANNEL:
                    waiting.append(w)
                    continue
                if holder:
                    for bc in waiting:
                        listener_words.append((slot, bc))
                        slot += 1
                    waiting = []
                holder.append((slot, w))
                slot += 1
                if w.action is Action.TURN:
                    break
            utt, records = _emit(f"{conv_id}_u{len(utterances):03d}", speaker, holder, clock, cfg)
            utterances.append(utt)
            hidden.extend(records)
            for bc_slot, bc in listener_words:
                utt, records = _emit(f"{conv_id}_u{len(utterances):03d}", listener, [(bc_slot, bc)], clock, cfg)
                utterances.append(utt)
                hidden.extend(records)
            clock += slot * cfg.word_seconds + 0.25
            turn += 1
        conversations.append(Conversation(conv_id, utterances))
        conv_index += 1
    logger.info("Generated %d conversations with %d word frames (seed %d)",
                len(conversations), total, cfg.seed)
    return Manifest(cfg.header(), conversations), hidden


def write_hidden_record(path: str, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")


def read_hidden_record(path: str) -> List[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def _log(values) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(values, dtype=np.float64))


def _text_log_likelihood(token: str, cfg: SyntheticConfig) -> np.ndarray:
    c = cfg.cue_probability[0]
    neutral = cfg.neutral_tokens
    is_neutral = token in neutral
    lik = np.zeros(3)
    for a in ACTIONS:
        cue_set = cfg.cue_tokens(a)
        present = c / len(cue_set) if token in cue_set else 0.0
        absent = (1.0 - c) / len(neutral) if is_neutral else 0.0
        lik[int(a)] = present + absent
    if not is_neutral and token not in cfg.tokens:
        raise DataError(f"Token {token!r} is not part of the synthetic vocabulary")
    return _log(lik)


def _gaussian_log_likelihood(x: np.ndarray, c: float, cfg: SyntheticConfig) -> np.ndarray:
    # The shared Gaussian normalizer cancels in the posterior.
    var2 = 2.0 * cfg.noise_sigma ** 2
    absent = -np.dot(x, x) / var2
    out = np.empty(3)
    for a in ACTIONS:
        diff = x - cfg.class_mean(a, x.shape[0])
        present = -np.dot(diff, diff) / var2
        out[int(a)] = np.logaddexp(_log(c) + present, _log(1.0 - c) + absent)
    return out


def bayes_oracle(sample: Sample, mask: ModalityMask, cfg: SyntheticConfig) -> ActionDistribution:
    """
    Exact posterior p(y | present modalities) under the generator.

    Audio and video likelihoods read the current word's signal: the last audio frame and
    the last video frame of the sample.

    Args:
        sample: A sample built from a manifest generated with cfg
        mask: Modalities the posterior may condition on; empty gives the prior
        cfg: The generating configuration
    """
    log_post = _log(cfg.priors)
    if Modality.TEXT in mask:
        log_post = log_post + _text_log_likelihood(sample.tokens[-1], cfg)
    if Modality.AUDIO in mask:
        x = sample.input_for(Modality.AUDIO).frames[-1]
        log_post = log_post + _gaussian_log_likelihood(x, cfg.cue_probability[1], cfg)
    if Modality.VIDEO in mask:
        x = sample.input_for(Modality.VIDEO).frames[-1]
        log_post = log_post + _gaussian_log_likelihood(x, cfg.cue_probability[2], cfg)
    top = np.max(log_post)
    if not np.isfinite(top):
        raise NumericError(f"Observation impossible under the generator for {sample.utt_id}/{sample.word_idx}")
    post = np.exp(log_post - top)
    return ActionDistribution.from_array(post / post.sum())


def oracle_accuracy(samples: Sequence[Sample], mask: ModalityMask, cfg: SyntheticConfig) -> float:
    """Fraction of samples whose oracle argmax equals the label."""
    if not samples:
        raise DataError("Cannot score an empty sample list")
    hits = sum(1 for s in samples if bayes_oracle(s, mask, cfg).argmax() is s.label)
    return hits / len(samples)
