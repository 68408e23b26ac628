# dataset.py

"""
Manifest ingestion, the KEEP / TURN / BACKCHANNEL labeler, and word-level
aligned sample construction.

A manifest is JSON Lines: a header record followed by one record per
utterance.
"""

import json
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .encoders import (AudioInput, ModalInput, PrecomputedInput, TextInput, VideoInput,
                       Vocabulary, left_pad_frames)
from .models import (MODALITIES, Action, Conversation, DataError, ManifestError, Modality,
                     ModalityMask, SchemaVersionError, Utterance, WordFrame)
from .numeric import make_rng

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SUPPORTED_SCHEMA_VERSIONS = (1,)

DEFAULT_BACKCHANNEL_VOCAB = frozenset({
    "yeah", "uh-huh", "mm-hmm", "hmm", "mhm", "right", "okay", "ok", "i see", "wow",
    "really", "yes", "sure", "exactly",
})


@dataclass(frozen=True)
class ManifestHeader:
    """
    First record of a manifest.

    Attributes:
        schema_version: Manifest format version
        audio_dim: Audio frame width
        video_dim: Video frame width
        n_video_frames: Frames per video input (n)
        audio_frame_rate: Audio frames per second; frame j starts j / rate after the first word
        bc_vocab: Backchannel vocabulary the labels were produced with, if recorded
    """
    schema_version: int = SCHEMA_VERSION
    audio_dim: int = 16
    video_dim: int = 16
    n_video_frames: int = 16
    audio_frame_rate: float = 100.0
    bc_vocab: Optional[Tuple[str, ...]] = None


@dataclass
class Manifest:
    header: ManifestHeader
    conversations: List[Conversation] = field(default_factory=list)


# Reading

def _require(record: dict, key: str, line_no: int, path: str):
    if key not in record:
        raise ManifestError(f"missing field {key!r}", line_no, path)
    return record[key]


def _parse_bc_vocab(value) -> Optional[Tuple[str, ...]]:
    if value is None:
        return None
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise TypeError("bc_vocab must be a list of strings")
    return tuple(value)


def _parse_header(record: dict, line_no: int, path: str) -> ManifestHeader:
    version = record.get("schema_version")
    if version not in SUPPORTED_SCHEMA_VERSIONS:
        raise SchemaVersionError(f"unsupported schema_version {version!r} "
                                 f"(supported: {list(SUPPORTED_SCHEMA_VERSIONS)})", line_no, path)
    try:
        return ManifestHeader(
            schema_version=int(version),
            audio_dim=int(record.get("audio_dim", 16)),
            video_dim=int(record.get("video_dim", 16)),
            n_video_frames=int(record.get("n", record.get("n_video_frames", 16))),
            audio_frame_rate=float(record.get("audio_frame_rate", 100.0)),
            bc_vocab=_parse_bc_vocab(record.get("bc_vocab")),
        )
    except (TypeError, ValueError) as e:
        raise ManifestError(f"bad header field: {e}", line_no, path)


def _parse_utterance(record: dict, header: ManifestHeader, line_no: int, path: str) -> Utterance:
    speaker = str(_require(record, "speaker", line_no, path))
    utt_id = str(_require(record, "utt_id", line_no, path))
    raw_words = _require(record, "words", line_no, path)
    if not isinstance(raw_words, list):
        raise ManifestError("'words' must be a list", line_no, path)
    words = []
    for i, raw in enumerate(raw_words):
        try:
            label = raw.get("label")
            words.append(WordFrame(
                word=str(raw["w"]),
                t_start=float(raw["t_start"]),
                t_end=float(raw["t_end"]),
                speaker=speaker,
                label=None if label is None else Action.parse(label),
            ))
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ManifestError(f"word {i} is malformed: {e}", line_no, path)
        except DataError as e:
            raise ManifestError(f"word {i}: {e}", line_no, path)

    audio = None
    if record.get("audio_frames") is not None:
        audio = np.asarray(record["audio_frames"], dtype=np.float64)
        if audio.size == 0:
            audio = None
        elif audio.ndim != 2 or audio.shape[1] != header.audio_dim:
            raise ManifestError(f"audio frames must have width {header.audio_dim}, "
                                f"got shape {audio.shape}", line_no, path)
    video_times = video_frames = None
    if record.get("video_frames"):
        try:
            video_times = np.array([float(f["t"]) for f in record["video_frames"]])
            video_frames = np.asarray([f["values"] for f in record["video_frames"]], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"video frame is malformed: {e}", line_no, path)
        if video_frames.ndim != 2 or video_frames.shape[1] != header.video_dim:
            raise ManifestError(f"video frames must have width {header.video_dim}, "
                                f"got shape {video_frames.shape}", line_no, path)
        order = np.argsort(video_times, kind="stable")
        video_times, video_frames = video_times[order], video_frames[order]
    for name, arr in (("audio", audio), ("video", video_frames)):
        if arr is not None and not np.all(np.isfinite(arr)):
            raise ManifestError(f"{name} frames contain non-finite values", line_no, path)
    try:
        return Utterance(utt_id, speaker, words, audio, header.audio_frame_rate, video_times, video_frames)
    except DataError as e:
        raise ManifestError(str(e), line_no, path)


def read_manifest(path: str) -> Manifest:
    """
    Load and validate a manifest.

    Args:
        path: JSON Lines manifest

    Returns:
        Manifest with conversations in order of first appearance

    Raises:
        FileNotFoundError: If the manifest does not exist
        ManifestError: Malformed record (with its line number), more than two speakers in a
            conversation, duplicate utterance ids, or an unsupported schema version
    """
    header = None
    grouped: Dict[str, List[Utterance]] = {}
    speakers: Dict[str, List[str]] = {}
    seen_ids = set()
    try:
        f = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"Manifest file '{path}' not found")
    with f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"invalid JSON: {e.msg}", line_no, path)
            if not isinstance(record, dict):
                raise ManifestError("record must be a JSON object", line_no, path)
            if header is None:
                if "schema_version" not in record:
                    raise ManifestError("first record must be the header with 'schema_version'",
                                        line_no, path)
                header = _parse_header(record, line_no, path)
                continue
            conv_id = str(_require(record, "conv_id", line_no, path))
            utt = _parse_utterance(record, header, line_no, path)
            if utt.utt_id in seen_ids:
                raise ManifestError(f"duplicate utt_id {utt.utt_id!r}", line_no, path)
            seen_ids.add(utt.utt_id)
            conv_speakers = speakers.setdefault(conv_id, [])
            if utt.speaker not in conv_speakers:
                conv_speakers.append(utt.speaker)
                if len(conv_speakers) > 2:
                    raise ManifestError(f"conversation {conv_id!r} has more than two speakers "
                                        f"{conv_speakers}", line_no, path)
            grouped.setdefault(conv_id, []).append(utt)
    conversations = [Conversation(conv_id, utts) for conv_id, utts in grouped.items()]
    logger.info("Loaded %d conversations (%d utterances) from %s",
                len(conversations), len(seen_ids), path)
    return Manifest(header or ManifestHeader(), conversations)


def parse_manifest(path: str) -> List[Conversation]:
    """Conversations of a manifest; an empty file yields an empty list."""
    return read_manifest(path).conversations


# Writing

def _utterance_record(conv_id: str, utt: Utterance) -> dict:
    words = []
    for w in utt.words:
        entry = {"w": w.word, "t_start": float(w.t_start), "t_end": float(w.t_end)}
        if w.label is not None:
            entry["label"] = w.label.name
        words.append(entry)
    record = {"conv_id": conv_id, "utt_id": utt.utt_id, "speaker": utt.speaker, "words": words}
    if utt.audio_frames is not None:
        record["audio_frames"] = [[float(v) for v in row] for row in utt.audio_frames]
    if utt.video_frames is not None:
        record["video_frames"] = [{"t": float(t), "values": [float(v) for v in row]}
                                  for t, row in zip(utt.video_times, utt.video_frames)]
    return record


def write_manifest(path: str, conversations: Sequence[Conversation],
                   header: Optional[ManifestHeader] = None) -> None:
    """Write conversations as a manifest; output is byte-stable for identical input."""
    header = header or ManifestHeader()
    head = {"schema_version": header.schema_version, "audio_dim": header.audio_dim,
            "video_dim": header.video_dim, "n": header.n_video_frames,
            "audio_frame_rate": header.audio_frame_rate}
    if header.bc_vocab is not None:
        head["bc_vocab"] = list(header.bc_vocab)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(head) + "\n")
        for conv in conversations:
            for utt in conv.utterances:
                f.write(json.dumps(_utterance_record(conv.conv_id, utt)) + "\n")


# Labeling

def normalize_text(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    stripped = re.sub(r"[^\w\s]", "", text.lower())
    return " ".join(stripped.split())


def _overlaps(a_start: float, a_end: float, b_start: float, b_end: float) -> bool:
    return a_start < b_end and b_start < a_end


def label_words(conv: Conversation, bc_vocab: Iterable[str] = DEFAULT_BACKCHANNEL_VOCAB) -> Conversation:
    """
    Annotate every word as KEEP, TURN or BACKCHANNEL.

    A word is BACKCHANNEL when its normalized token, or the whole utterance's normalized
    text, is in the backchannel vocabulary and the word overlaps an utterance of the other
    speaker. Otherwise the final word of each utterance is TURN and the rest are KEEP.

    Args:
        conv: Conversation to label; existing labels are replaced
        bc_vocab: Backchannel words and phrases, normalized before matching

    Returns:
        A new Conversation; the input is not modified
    """
    vocab = {normalize_text(v) for v in bc_vocab}
    labeled = []
    for utt in conv.utterances:
        others = [(o.t_start, o.t_end) for o in conv.utterances if o.speaker != utt.speaker]
        phrase_match = normalize_text(utt.text) in vocab
        last = len(utt.words) - 1
        words = []
        for i, w in enumerate(utt.words):
            vocab_match = phrase_match or normalize_text(w.word) in vocab
            overlap = any(_overlaps(w.t_start, w.t_end, s, e) for s, e in others)
            if vocab_match and overlap:
                label = Action.BACKCHANNEL
            elif i == last:
                label = Action.TURN
            else:
                label = Action.KEEP
            words.append(replace(w, label=label))
        labeled.append(replace(utt, words=words))
    return Conversation(conv.conv_id, labeled)


# Samples

@dataclass(frozen=True, eq=False)
class Sample:
    """
    Word-level aligned input X = (X_T, X_A, X_V) for word `word_idx` of an utterance.

    Attributes:
        utt_id: Source utterance
        word_idx: Index of the predicted word
        tokens: Word prefix up to and including the predicted word
        text: Token ids of the prefix
        audio: Audio from utterance start through the word's end, or None
        video: Last n video frames at or before the word's end, or None
        label: Target action, None for unlabeled data
        precomputed: Stored backbone features that replace raw input, by modality
    """
    utt_id: str
    word_idx: int
    tokens: Tuple[str, ...]
    text: Optional[TextInput]
    audio: Optional[AudioInput]
    video: Optional[VideoInput]
    label: Optional[Action]
    precomputed: Dict[Modality, np.ndarray] = field(default_factory=dict)

    @property
    def available(self) -> ModalityMask:
        return ModalityMask(
            self.text is not None or Modality.TEXT in self.precomputed,
            self.audio is not None or Modality.AUDIO in self.precomputed,
            self.video is not None or Modality.VIDEO in self.precomputed,
        )

    def input_for(self, modality: Modality) -> ModalInput:
        """Encoder input for a modality; stored features take priority over raw input."""
        modality = Modality(modality)
        if modality in self.precomputed:
            return PrecomputedInput(self.precomputed[modality])
        raw = {Modality.TEXT: self.text, Modality.AUDIO: self.audio, Modality.VIDEO: self.video}[modality]
        if raw is None:
            raise DataError(f"Sample {self.utt_id}/{self.word_idx} has no {modality.title} input")
        return raw


def audio_frame_count(utt: Utterance, word_idx: int) -> int:
    """Audio frames covering the utterance from its start through the end of word `word_idx`."""
    span = utt.words[word_idx].t_end - utt.t_start
    count = int(round(span * utt.audio_frame_rate))
    return min(max(count, 1), len(utt.audio_frames))


def build_samples(utt: Utterance, n: int, vocab: Vocabulary, require_labels: bool = True) -> List[Sample]:
    """
    One Sample per word of an utterance.

    Args:
        utt: Labeled utterance
        n: Video frames per sample
        vocab: Word-to-id table for the text prefix
        require_labels: Raise if a word is unlabeled

    Returns:
        Samples whose missing streams are left as None (modality absent)

    Raises:
        DataError: If require_labels is set and a word has no label
    """
    samples = []
    for i, word in enumerate(utt.words):
        if require_labels and word.label is None:
            raise DataError(f"Utterance {utt.utt_id} word {i} ({word.word!r}) is unlabeled")
        tokens = tuple(w.word for w in utt.words[:i + 1])
        audio = None
        if utt.has_audio:
            audio = AudioInput(utt.audio_frames[:audio_frame_count(utt, i)])
        video = None
        if utt.has_video:
            visible = utt.video_times <= word.t_end
            video = left_pad_frames(utt.video_frames[visible], utt.video_times[visible], n,
                                    utt.video_frames.shape[1])
        samples.append(Sample(utt.utt_id, i, tokens, vocab.encode(tokens), audio, video, word.label))
    return samples


def build_dataset(conversations: Sequence[Conversation], n: int, vocab: Vocabulary,
                  require_labels: bool = True) -> List[Sample]:
    samples = []
    for conv in conversations:
        for utt in conv.utterances:
            samples.extend(build_samples(utt, n, vocab, require_labels))
    return samples


def vocabulary_from(conversations: Sequence[Conversation]) -> Vocabulary:
    return Vocabulary.build(w.word for conv in conversations for utt in conv.utterances for w in utt.words)


def attach_precomputed(samples: Sequence[Sample],
                       index: Dict[Tuple[str, int, Modality], np.ndarray]) -> List[Sample]:
    """Replace raw inputs with stored backbone features wherever a record exists."""
    attached = []
    hits = 0
    for s in samples:
        stored = {m: index[(s.utt_id, s.word_idx, m)] for m in MODALITIES
                  if (s.utt_id, s.word_idx, m) in index}
        hits += len(stored)
        attached.append(replace(s, precomputed={**s.precomputed, **stored}) if stored else s)
    logger.info("Attached %d precomputed features to %d samples", hits, len(samples))
    return attached


def split_conversations(conversations: Sequence[Conversation], test_fraction: float,
                        seed: int) -> Tuple[List[Conversation], List[Conversation]]:
    """Deterministic train/test split by conversation, preserving the original order."""
    if not 0.0 <= test_fraction < 1.0:
        raise DataError(f"Test fraction must lie in [0, 1), got {test_fraction}")
    order = make_rng(seed).permutation(len(conversations))
    n_test = int(round(test_fraction * len(conversations)))
    test_ids = set(order[:n_test].tolist())
    train = [c for i, c in enumerate(conversations) if i not in test_ids]
    test = [c for i, c in enumerate(conversations) if i in test_ids]
    return train, test


def dataset_summary(conversations: Sequence[Conversation]) -> pd.DataFrame:
    """Utterance, word-frame and action counts of a labeled dataset, one row per metric."""
    utterances = [u for c in conversations for u in c.utterances]
    labels = [w.label for u in utterances for w in u.words]
    n_words = len(labels)
    stats = {
        "conversations": len(conversations),
        "speakers": len({u.speaker for u in utterances}),
        "utterances": len(utterances),
        "word_frames": n_words,
        "keep": sum(1 for lab in labels if lab is Action.KEEP),
        "turn": sum(1 for lab in labels if lab is Action.TURN),
        "backchannel": sum(1 for lab in labels if lab is Action.BACKCHANNEL),
        "unlabeled": sum(1 for lab in labels if lab is None),
        "utterances_with_backchannel": sum(
            1 for u in utterances if any(w.label is Action.BACKCHANNEL for w in u.words)),
        "mean_words_per_utterance": n_words / len(utterances) if utterances else 0.0,
        "mean_utterance_seconds": (float(np.mean([u.t_end - u.t_start for u in utterances]))
                                   if utterances else 0.0),
    }
    return pd.Series(stats, dtype=object).rename_axis("metric").to_frame("value")
