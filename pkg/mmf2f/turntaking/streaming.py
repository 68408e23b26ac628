# streaming.py

"""
Word-by-word prediction with per-utterance encoder state.

Each incoming record describes one word frame: its token and optionally the
audio and video frames that arrived with it. The text encoder advances its
last hidden state by one token, the audio encoder appends the hidden states
of the new frames, and the video encoder keeps a window of the last n frames.
The result equals re-encoding the whole prefix from scratch.
"""

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, Iterable, Iterator, List, Optional, TextIO

import numpy as np

from .bundle import ModelBundle, distribution_from_features, predict_distribution
from .dataset import Sample
from .encoders import (PRECOMPUTED, AudioInput, EncoderParams, left_pad_frames, run_recurrence,
                       temporal_average_pool)
from .models import (Action, ActionDistribution, ConfigError, DataError, DimensionError, Modality,
                     ModalityMask)

logger = logging.getLogger(__name__)


@dataclass
class FrameRecord:
    """
    One streamed word frame.

    Attributes:
        token: The word, or None when no transcript arrived
        audio_frames: Audio frames that arrived with the word, shape (k, audio_dim)
        video_frames: Video frames that arrived with the word, shape (k, video_dim)
        reset: Start a new utterance before processing this record
    """
    token: Optional[str] = None
    audio_frames: Optional[np.ndarray] = None
    video_frames: Optional[np.ndarray] = None
    reset: bool = False

    @property
    def mask(self) -> ModalityMask:
        return ModalityMask(self.token is not None, self.audio_frames is not None,
                            self.video_frames is not None)

    @property
    def is_control_only(self) -> bool:
        return self.mask.is_empty

    @classmethod
    def from_dict(cls, record: dict) -> "FrameRecord":
        """Parse {token, audio_frame?, video_frame?, reset?}; a frame may be one vector or a list of them."""
        if not isinstance(record, dict):
            raise DataError(f"Stream record must be a JSON object, got {type(record).__name__}")
        token = record.get("token")
        if token is not None and not isinstance(token, str):
            raise DataError(f"Token must be a string, got {token!r}")
        return cls(token, _frames(record.get("audio_frame"), "audio_frame"),
                   _frames(record.get("video_frame"), "video_frame"), bool(record.get("reset", False)))


def _frames(value, name: str) -> Optional[np.ndarray]:
    if value is None:
        return None
    try:
        frames = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise DataError(f"{name} must be a list of numbers")
    if frames.ndim == 1:
        frames = frames[None, :]
    if frames.ndim != 2 or frames.shape[0] == 0 or frames.shape[1] == 0:
        raise DataError(f"{name} must be a vector or a non-empty list of vectors")
    if not np.all(np.isfinite(frames)):
        raise DataError(f"{name} contains non-finite values")
    return frames


@dataclass
class StreamingEncoderState:
    """
    Incremental state of the three encoders for the current utterance.

    Attributes:
        n_video_frames: Video window length n
        text_hidden: Last text hidden state (None before the first token)
        tokens: Words seen so far
        audio_hidden: Hidden state after every audio frame
        audio_frames: Every audio frame seen so far
        video_window: The last n video frames
        video_seen: Every video frame seen so far
    """
    n_video_frames: int
    text_hidden: Optional[np.ndarray] = None
    tokens: List[str] = field(default_factory=list)
    audio_hidden: List[np.ndarray] = field(default_factory=list)
    audio_frames: List[np.ndarray] = field(default_factory=list)
    video_window: Deque[np.ndarray] = field(default_factory=deque)
    video_seen: List[np.ndarray] = field(default_factory=list)

    def reset(self) -> None:
        self.text_hidden = None
        self.tokens = []
        self.audio_hidden = []
        self.audio_frames = []
        self.video_window = deque(maxlen=self.n_video_frames)
        self.video_seen = []

    def __post_init__(self):
        self.video_window = deque(self.video_window, maxlen=self.n_video_frames)


def _require_recurrent(params: EncoderParams) -> None:
    if params.kind == PRECOMPUTED:
        raise ConfigError(f"The {params.modality.title} encoder reads stored features and cannot stream raw input")


def _text_step(params: EncoderParams, state: StreamingEncoderState, token_id: int) -> np.ndarray:
    _require_recurrent(params)
    x = params.embedding[[token_id]]
    state.text_hidden = run_recurrence(params, x, state.text_hidden)[-1]
    return params.W_out @ state.text_hidden + params.b_out


def _audio_step(params: EncoderParams, state: StreamingEncoderState, frames: np.ndarray) -> np.ndarray:
    _require_recurrent(params)
    if frames.shape[1] != params.input_dim:
        raise DimensionError("Audio frame", params.input_dim, frames.shape[1])
    h0 = state.audio_hidden[-1] if state.audio_hidden else None
    state.audio_hidden.extend(run_recurrence(params, frames, h0))
    state.audio_frames.extend(frames)
    return params.W_out @ temporal_average_pool(state.audio_hidden) + params.b_out


def _video_step(params: EncoderParams, state: StreamingEncoderState, frames: np.ndarray) -> np.ndarray:
    _require_recurrent(params)
    if frames.shape[1] != params.input_dim:
        raise DimensionError("Video frame", params.input_dim, frames.shape[1])
    state.video_window.extend(frames)
    state.video_seen.extend(frames)
    window = np.array(state.video_window)
    padded = left_pad_frames(window, np.arange(len(window), dtype=np.float64),
                             state.n_video_frames, params.input_dim)
    hidden = run_recurrence(params, padded.frames)
    return params.W_out @ temporal_average_pool(hidden) + params.b_out


def decide(dist: ActionDistribution, tau_turn: Optional[float] = None,
           tau_bc: Optional[float] = None) -> Action:
    """
    Argmax decision; a TURN or BACKCHANNEL winner must also exceed its threshold
    when one is set, otherwise the decision is KEEP.
    """
    winner = dist.argmax()
    if winner is Action.TURN and tau_turn is not None and dist.p_turn <= tau_turn:
        return Action.KEEP
    if winner is Action.BACKCHANNEL and tau_bc is not None and dist.p_bc <= tau_bc:
        return Action.KEEP
    return winner


class StreamingPredictor:
    """
    Processes word frames strictly in arrival order, keeping encoder state per utterance.

    The modality mask of each prediction is taken from the fields present in
    the current record.
    """

    def __init__(self, bundle: ModelBundle, tau_turn: Optional[float] = None,
                 tau_bc: Optional[float] = None, auto_reset: bool = False):
        for name, tau in (("tau_turn", tau_turn), ("tau_bc", tau_bc)):
            if tau is not None and not 0.0 <= tau <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {tau}")
        self.bundle = bundle
        self.tau_turn = tau_turn
        self.tau_bc = tau_bc
        self.auto_reset = auto_reset
        self.state = StreamingEncoderState(bundle.config.n_video_frames)
        self.frames_seen = 0

    def reset(self) -> None:
        self.state.reset()

    def step(self, record: FrameRecord) -> Optional[dict]:
        """Consume one record; returns the output record, or None for a bare reset."""
        if record.reset:
            self.reset()
        mask = record.mask
        if mask.is_empty:
            if record.reset:
                return None
            raise DataError("Stream record carries no token, audio_frame or video_frame")
        features: Dict[Modality, np.ndarray] = {}
        encoders = self.bundle.encoders
        if record.token is not None:
            self.state.tokens.append(record.token)
            token_id = self.bundle.vocabulary.word_id(record.token)
            features[Modality.TEXT] = _text_step(encoders[Modality.TEXT], self.state, token_id)
        if record.audio_frames is not None:
            features[Modality.AUDIO] = _audio_step(encoders[Modality.AUDIO], self.state, record.audio_frames)
        if record.video_frames is not None:
            features[Modality.VIDEO] = _video_step(encoders[Modality.VIDEO], self.state, record.video_frames)
        dist = distribution_from_features(self.bundle, features, mask)
        decision = decide(dist, self.tau_turn, self.tau_bc)
        self.frames_seen += 1
        if self.auto_reset and decision is Action.TURN:
            self.reset()
        return {"p_keep": dist.p_keep, "p_turn": dist.p_turn, "p_bc": dist.p_bc,
                "decision": decision.name, "modalities": mask.code}

    def run(self, records: Iterable[FrameRecord]) -> Iterator[dict]:
        for record in records:
            out = self.step(record)
            if out is not None:
                yield out


def replay_distribution(bundle: ModelBundle, state: StreamingEncoderState,
                        mask: ModalityMask) -> ActionDistribution:
    """
    Re-encode the whole prefix held in `state` from scratch.

    Reference for the incremental path: both must agree for every prefix.
    """
    n = state.n_video_frames
    text = bundle.vocabulary.encode(state.tokens) if state.tokens and Modality.TEXT in mask else None
    audio = AudioInput(np.array(state.audio_frames)) if state.audio_frames and Modality.AUDIO in mask else None
    video = None
    if state.video_seen and Modality.VIDEO in mask:
        seen = np.array(state.video_seen)
        video = left_pad_frames(seen[-n:], np.arange(min(len(seen), n), dtype=np.float64), n, seen.shape[1])
    sample = Sample("stream", max(len(state.tokens) - 1, 0), tuple(state.tokens), text, audio, video, None)
    return predict_distribution(bundle, sample, mask)


def read_stream(handle: TextIO) -> Iterator[FrameRecord]:
    """Parse JSON Lines from a text stream, skipping blank lines."""
    for line_no, line in enumerate(handle, start=1):
        if not line.strip():
            continue
        try:
            yield FrameRecord.from_dict(json.loads(line))
        except json.JSONDecodeError as e:
            raise DataError(f"Stream line {line_no} is not valid JSON: {e}")
