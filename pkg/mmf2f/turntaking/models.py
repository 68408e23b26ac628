# models.py

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterator, Optional, Tuple

import numpy as np


# Custom Exceptions
class TurnTakingError(Exception):
    """Base class for every error raised by the turntaking package."""
    pass


class DimensionError(TurnTakingError, ValueError):
    """Exception raised when an array width does not match what a parameter set expects."""

    def __init__(self, what: str, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected width {expected}, got {actual}")


class DataError(TurnTakingError):
    """Exception raised for invalid dataset content."""
    pass


class ManifestError(DataError):
    """Exception raised for a malformed manifest or feature record, with its line number."""

    def __init__(self, message: str, line_no: Optional[int] = None, path: Optional[str] = None):
        self.line_no = line_no
        self.path = path
        location = ""
        if path is not None:
            location += f"{path}:"
        if line_no is not None:
            location += f"{line_no}:"
        super().__init__(f"{location} {message}".strip())


class SchemaVersionError(ManifestError):
    """Exception raised when a manifest header declares an unsupported schema version."""
    pass


class NumericError(TurnTakingError, ArithmeticError):
    """Exception raised when a loss, gradient or posterior stops being finite."""
    pass


class ConfigError(TurnTakingError, ValueError):
    """Exception raised for invalid configuration values."""
    pass


class Modality(str, Enum):
    TEXT = "T"
    AUDIO = "A"
    VIDEO = "V"

    @property
    def title(self) -> str:
        return {"T": "Text", "A": "Audio", "V": "Video"}[self.value]


# Canonical order for every product and every serialized listing.
MODALITIES: Tuple[Modality, ...] = (Modality.TEXT, Modality.AUDIO, Modality.VIDEO)


class Action(IntEnum):
    KEEP = 0
    TURN = 1
    BACKCHANNEL = 2

    @classmethod
    def parse(cls, name: str) -> "Action":
        """Parse a label name such as 'TURN' or 'backchannel'."""
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise DataError(f"Unknown action label: {name!r}")


ACTIONS: Tuple[Action, ...] = (Action.KEEP, Action.TURN, Action.BACKCHANNEL)


@dataclass(frozen=True)
class ModalityMask:
    """
    Presence flags for the three modalities.

    Attributes:
        has_text: Text stream available
        has_audio: Audio stream available
        has_video: Video stream available
    """
    has_text: bool = True
    has_audio: bool = True
    has_video: bool = True

    @classmethod
    def full(cls) -> "ModalityMask":
        return cls(True, True, True)

    @classmethod
    def empty(cls) -> "ModalityMask":
        return cls(False, False, False)

    @classmethod
    def of(cls, modalities) -> "ModalityMask":
        present = {Modality(m) for m in modalities}
        return cls(Modality.TEXT in present, Modality.AUDIO in present, Modality.VIDEO in present)

    @classmethod
    def parse(cls, code: str) -> "ModalityMask":
        """Parse a code such as 'TA' or 'tav'."""
        code = code.strip().upper()
        if not code or any(ch not in "TAV" for ch in code):
            raise ConfigError(f"Invalid modality code: {code!r} (use letters T, A, V)")
        return cls.of(code)

    @classmethod
    def all_nonempty(cls) -> Tuple["ModalityMask", ...]:
        """The seven non-empty masks: uni-modal first, then bi-modal, then tri-modal."""
        codes = ("T", "A", "V", "TA", "TV", "AV", "TAV")
        return tuple(cls.parse(code) for code in codes)

    def __contains__(self, modality) -> bool:
        modality = Modality(modality)
        if modality is Modality.TEXT:
            return self.has_text
        if modality is Modality.AUDIO:
            return self.has_audio
        return self.has_video

    def __iter__(self) -> Iterator[Modality]:
        return iter(self.present)

    def __len__(self) -> int:
        return len(self.present)

    def __and__(self, other: "ModalityMask") -> "ModalityMask":
        return ModalityMask(self.has_text and other.has_text,
                            self.has_audio and other.has_audio,
                            self.has_video and other.has_video)

    @property
    def present(self) -> Tuple[Modality, ...]:
        return tuple(m for m in MODALITIES if m in self)

    @property
    def is_empty(self) -> bool:
        return not (self.has_text or self.has_audio or self.has_video)

    def without(self, modality) -> "ModalityMask":
        return ModalityMask.of(m for m in self.present if m is not Modality(modality))

    @property
    def code(self) -> str:
        return "".join(m.value for m in self.present)

    @property
    def label(self) -> str:
        """Row label in the report tables, e.g. 'Text+Audio'."""
        return "+".join(m.title for m in self.present) or "None"


@dataclass(frozen=True)
class ActionDistribution:
    """Probabilities of the keep, turn-taking and backchannel actions."""
    p_keep: float
    p_turn: float
    p_bc: float

    def __post_init__(self):
        values = (self.p_keep, self.p_turn, self.p_bc)
        if any(not np.isfinite(p) or p < 0 for p in values):
            raise NumericError(f"Invalid action probabilities: {values}")
        if abs(sum(values) - 1.0) > 1e-9:
            raise NumericError(f"Action probabilities do not sum to 1: {values}")

    @classmethod
    def from_array(cls, probs) -> "ActionDistribution":
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (3,):
            raise DimensionError("action distribution", 3, probs.shape)
        return cls(float(probs[0]), float(probs[1]), float(probs[2]))

    @classmethod
    def uniform(cls) -> "ActionDistribution":
        return cls(1 / 3, 1 / 3, 1 / 3)

    def as_array(self) -> np.ndarray:
        return np.array([self.p_keep, self.p_turn, self.p_bc], dtype=np.float64)

    def argmax(self) -> Action:
        """Most probable action; ties go to the lowest index (Keep < Turn < BC)."""
        return Action(int(np.argmax(self.as_array())))

    def __getitem__(self, action) -> float:
        return float(self.as_array()[int(action)])


@dataclass
class WordFrame:
    """
    A single transcribed word with timestamps.

    Attributes:
        word: The word text as transcribed
        t_start: Start time in seconds
        t_end: End time in seconds
        speaker: Speaker id
        label: Action label, None until labeled
    """
    word: str
    t_start: float
    t_end: float
    speaker: str
    label: Optional[Action] = None

    def __post_init__(self):
        if not (np.isfinite(self.t_start) and np.isfinite(self.t_end)):
            raise DataError(f"Word {self.word!r} has non-finite timestamps")
        if self.t_start > self.t_end:
            raise DataError(f"Word {self.word!r} starts after it ends "
                            f"({self.t_start} > {self.t_end})")


@dataclass
class Utterance:
    """
    A sentence-level clip by one speaker.

    Attributes:
        utt_id: Utterance id, unique within the manifest
        speaker: Speaker id
        words: Time-ordered word frames
        audio_frames: (n_frames, audio_dim) array starting at the first word, or None
        audio_frame_rate: Audio frames per second
        video_times: (n_frames,) frame timestamps, sorted, or None
        video_frames: (n_frames, video_dim) array, or None
    """
    utt_id: str
    speaker: str
    words: list
    audio_frames: Optional[np.ndarray] = None
    audio_frame_rate: float = 100.0
    video_times: Optional[np.ndarray] = None
    video_frames: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.words:
            raise DataError(f"Utterance {self.utt_id} has no words")
        for prev, cur in zip(self.words, self.words[1:]):
            if cur.t_start < prev.t_start:
                raise DataError(f"Utterance {self.utt_id}: word times decrease at {cur.word!r}")
            if cur.t_start < prev.t_end:
                raise DataError(f"Utterance {self.utt_id}: words {prev.word!r} and "
                                f"{cur.word!r} overlap")
        if (self.video_times is None) != (self.video_frames is None):
            raise DataError(f"Utterance {self.utt_id}: video times and frames must come together")

    @property
    def t_start(self) -> float:
        return self.words[0].t_start

    @property
    def t_end(self) -> float:
        return self.words[-1].t_end

    @property
    def text(self) -> str:
        return " ".join(w.word for w in self.words)

    @property
    def has_audio(self) -> bool:
        return self.audio_frames is not None and len(self.audio_frames) > 0

    @property
    def has_video(self) -> bool:
        return self.video_frames is not None and len(self.video_frames) > 0


@dataclass
class Conversation:
    """
    A dyadic conversation: at most two speakers, utterances ordered by start time.
    """
    conv_id: str
    utterances: list = field(default_factory=list)

    def __post_init__(self):
        self.utterances = sorted(self.utterances, key=lambda u: u.t_start)
        if len(self.speakers) > 2:
            raise DataError(f"Conversation {self.conv_id} has more than two speakers: "
                            f"{list(self.speakers)}")

    @property
    def speakers(self) -> Tuple[str, ...]:
        seen = []
        for utt in self.utterances:
            if utt.speaker not in seen:
                seen.append(utt.speaker)
        return tuple(seen)

    @property
    def n_words(self) -> int:
        return sum(len(u.words) for u in self.utterances)
