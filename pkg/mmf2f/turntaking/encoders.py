# encoders.py

"""
Uni-modal encoders E_T, E_A, E_V.

Each recurrent encoder runs a per-step input projection followed by a
single-layer tanh recurrence, h_t = tanh(W_in x_t + b_in + W_rec h_{t-1}).
The text encoder keeps the state of the last token; audio and video average
the states over time. A linear map then produces the modal feature z_k.
A precomputed encoder passes stored backbone embeddings straight through.
"""

import json
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .models import DataError, DimensionError, ManifestError, Modality, ConfigError
from .numeric import MlpParams, glorot_uniform, init_mlp, mlp_forward

logger = logging.getLogger(__name__)

RECURRENT = "recurrent"
PRECOMPUTED = "precomputed"
DEFAULT_FEATURE_DIM = 256


@dataclass(frozen=True)
class Vocabulary:
    """
    Whitespace+lowercase word-to-id table. Id 0 is reserved for unknown words.
    """
    tokens: Tuple[str, ...]

    UNKNOWN = "<unk>"

    @staticmethod
    def normalize(word: str) -> str:
        return word.strip().lower()

    @classmethod
    def build(cls, words: Iterable[str]) -> "Vocabulary":
        return cls(tuple(sorted({cls.normalize(w) for w in words if cls.normalize(w)})))

    @property
    def size(self) -> int:
        return len(self.tokens) + 1

    def word_id(self, word: str) -> int:
        index = self._index().get(self.normalize(word))
        return 0 if index is None else index + 1

    def token(self, token_id: int) -> str:
        return self.UNKNOWN if token_id == 0 else self.tokens[token_id - 1]

    def encode(self, words: Sequence[str]) -> "TextInput":
        return TextInput(tuple(self.word_id(w) for w in words))

    def _index(self) -> Dict[str, int]:
        cached = self.__dict__.get("_cached_index")
        if cached is None:
            cached = {tok: i for i, tok in enumerate(self.tokens)}
            object.__setattr__(self, "_cached_index", cached)
        return cached


@dataclass(frozen=True)
class TextInput:
    """Token ids of the word prefix, most recent last."""
    token_ids: Tuple[int, ...]

    def __post_init__(self):
        if len(self.token_ids) == 0:
            raise DataError("Text input is empty")


@dataclass(frozen=True, eq=False)
class AudioInput:
    """Per-frame audio feature vectors, shape (n_frames, width)."""
    frames: np.ndarray

    def __post_init__(self):
        _check_frames("Audio", self.frames)


@dataclass(frozen=True, eq=False)
class VideoInput:
    """
    The last n video frames, shape (n, width).

    Attributes:
        frames: Frame feature vectors after padding
        times: Frame timestamps; padding repeats the earliest time, or NaN for zero frames
        n_padded: How many leading frames are padding
    """
    frames: np.ndarray
    times: Optional[np.ndarray] = None
    n_padded: int = 0

    def __post_init__(self):
        _check_frames("Video", self.frames)


@dataclass(frozen=True, eq=False)
class PrecomputedInput:
    """A stored backbone embedding used in place of raw modality input."""
    vector: np.ndarray


ModalInput = Union[TextInput, AudioInput, VideoInput, PrecomputedInput]

_INPUT_TYPES = {Modality.TEXT: TextInput, Modality.AUDIO: AudioInput, Modality.VIDEO: VideoInput}


def _check_frames(kind: str, frames: np.ndarray) -> None:
    if not isinstance(frames, np.ndarray) or frames.ndim != 2:
        raise DataError(f"{kind} input must be a 2-D frame array")
    if frames.shape[0] == 0:
        raise DataError(f"{kind} input is empty")


def left_pad_frames(frames: np.ndarray, times: np.ndarray, n: int, width: int) -> VideoInput:
    """
    Keep the last n frames; pad shorter sequences on the left by repeating the earliest frame.
    With no frames at all the result is n zero frames.
    """
    if len(frames) == 0:
        return VideoInput(np.zeros((n, width)), np.full(n, np.nan), n)
    frames = frames[-n:]
    times = times[-n:]
    missing = n - len(frames)
    if missing > 0:
        frames = np.vstack([np.repeat(frames[:1], missing, axis=0), frames])
        times = np.concatenate([np.repeat(times[:1], missing), times])
    return VideoInput(np.array(frames, dtype=np.float64), np.array(times, dtype=np.float64),
                      max(missing, 0))


@dataclass
class EncoderParams:
    """
    Parameters of one uni-modal encoder plus its stage-1 prediction head.

    Attributes:
        modality: Which stream the encoder reads
        kind: 'recurrent' or 'precomputed'
        head: Uni-modal head used for stage-1 training and uni-modal inference
        embedding: (vocab, embed_dim) table, text only
        W_in, b_in: Per-step input projection
        W_rec: Recurrent mixing weights
        W_out, b_out: Output projection to the feature width
    """
    modality: Modality
    kind: str
    head: MlpParams
    embedding: Optional[np.ndarray] = None
    W_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    W_rec: Optional[np.ndarray] = None
    W_out: Optional[np.ndarray] = None
    b_out: Optional[np.ndarray] = None

    _BODY = ("embedding", "W_in", "b_in", "W_rec", "W_out", "b_out")

    @property
    def feature_dim(self) -> int:
        if self.kind == PRECOMPUTED:
            return self.head.sizes[0]
        return self.W_out.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_in.shape[1]

    def body_arrays(self) -> Dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self._BODY if getattr(self, k) is not None}

    def arrays(self) -> Dict[str, np.ndarray]:
        out = self.body_arrays()
        out.update({f"head.{k}": v for k, v in self.head.arrays().items()})
        return out

    def with_arrays(self, arrays: Dict[str, np.ndarray]) -> "EncoderParams":
        """Copy of these parameters with the named arrays replaced."""
        merged = self.arrays()
        merged.update(arrays)
        head = MlpParams.from_arrays({k[len("head."):]: v for k, v in merged.items()
                                      if k.startswith("head.")})
        body = {k: merged.get(k) for k in self._BODY}
        return EncoderParams(self.modality, self.kind, head, **body)


def init_encoder(modality: Modality, input_dim: int, rng: np.random.Generator,
                 hidden_dim: int = 64, feature_dim: int = DEFAULT_FEATURE_DIM,
                 head_sizes: Sequence[int] = (DEFAULT_FEATURE_DIM, 64, 3),
                 vocab_size: Optional[int] = None) -> EncoderParams:
    """
    Seeded toy encoder for one modality.

    Args:
        modality: Encoder stream
        input_dim: Embedding width (text) or per-frame feature width (audio/video)
        rng: Random stream
        hidden_dim: Recurrent state width
        feature_dim: Output feature width (z_k)
        head_sizes: Uni-modal head layer sizes; must start at feature_dim
        vocab_size: Embedding rows, text only
    """
    modality = Modality(modality)
    if head_sizes[0] != feature_dim:
        raise ConfigError(f"Head input {head_sizes[0]} must equal feature width {feature_dim}")
    embedding = None
    if modality is Modality.TEXT:
        if not vocab_size:
            raise ConfigError("Text encoder needs a vocabulary size")
        embedding = rng.normal(0.0, 1.0, size=(vocab_size, input_dim))
    W_in = glorot_uniform(rng, hidden_dim, input_dim)
    W_rec = glorot_uniform(rng, hidden_dim, hidden_dim)
    W_out = glorot_uniform(rng, feature_dim, hidden_dim)
    head = init_mlp(head_sizes, rng)
    return EncoderParams(modality, RECURRENT, head, embedding, W_in, np.zeros(hidden_dim),
                         W_rec, W_out, np.zeros(feature_dim))


def init_precomputed_encoder(modality: Modality, rng: np.random.Generator,
                             feature_dim: int = DEFAULT_FEATURE_DIM,
                             head_sizes: Sequence[int] = (DEFAULT_FEATURE_DIM, 64, 3)) -> EncoderParams:
    """Pass-through encoder over stored embeddings; only its head has parameters."""
    if head_sizes[0] != feature_dim:
        raise ConfigError(f"Head input {head_sizes[0]} must equal feature width {feature_dim}")
    return EncoderParams(Modality(modality), PRECOMPUTED, init_mlp(head_sizes, rng))


def temporal_average_pool(hidden_seq) -> np.ndarray:
    """Coordinate-wise mean over time of a non-empty sequence of equal-width vectors."""
    seq = np.asarray(hidden_seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise DataError("Cannot pool an empty hidden-state sequence")
    return seq.mean(axis=0)


@dataclass
class EncoderCache:
    inputs: Optional[np.ndarray]
    hidden: Optional[np.ndarray]
    pooled: Optional[np.ndarray]
    token_ids: Optional[np.ndarray] = None


def _input_matrix(params: EncoderParams, inp: ModalInput) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    expected_type = _INPUT_TYPES[params.modality]
    if not isinstance(inp, expected_type):
        raise DataError(f"{params.modality.title} encoder cannot read {type(inp).__name__}")
    if params.modality is Modality.TEXT:
        ids = np.asarray(inp.token_ids, dtype=np.int64)
        vocab = params.embedding.shape[0]
        if ids.min() < 0 or ids.max() >= vocab:
            raise DimensionError("token id range", vocab, int(ids.max()) + 1)
        return params.embedding[ids], ids
    frames = np.asarray(inp.frames, dtype=np.float64)
    if frames.shape[1] != params.input_dim:
        raise DimensionError(f"{params.modality.title} frame", params.input_dim, frames.shape[1])
    return frames, None


def run_recurrence(params: EncoderParams, inputs: np.ndarray,
                   h0: Optional[np.ndarray] = None) -> np.ndarray:
    """Hidden states h_1..h_T for an input matrix, starting from h0 (zeros by default)."""
    projected = inputs @ params.W_in.T + params.b_in
    hidden = np.empty((inputs.shape[0], params.W_rec.shape[0]))
    h = np.zeros(params.W_rec.shape[0]) if h0 is None else h0
    for t in range(inputs.shape[0]):
        h = np.tanh(projected[t] + params.W_rec @ h)
        hidden[t] = h
    return hidden


def encoder_forward(params: EncoderParams, inp: ModalInput) -> Tuple[np.ndarray, EncoderCache]:
    """
    Encode one input into its modal feature, keeping what the backward pass needs.

    Raises:
        DataError: If the input is empty or of the wrong type
        DimensionError: If its width does not match the parameters
    """
    if params.kind == PRECOMPUTED:
        if not isinstance(inp, PrecomputedInput):
            raise DataError(f"Precomputed {params.modality.title} encoder needs a PrecomputedInput")
        vector = np.asarray(inp.vector, dtype=np.float64)
        if vector.shape != (params.feature_dim,):
            raise DimensionError(f"precomputed {params.modality.title} feature",
                                 params.feature_dim, vector.shape[0] if vector.ndim == 1 else vector.shape)
        return vector.copy(), EncoderCache(None, None, None)
    inputs, ids = _input_matrix(params, inp)
    hidden = run_recurrence(params, inputs)
    pooled = hidden[-1] if params.modality is Modality.TEXT else temporal_average_pool(hidden)
    z = params.W_out @ pooled + params.b_out
    return z, EncoderCache(inputs, hidden, pooled, ids)


def encoder_backward(params: EncoderParams, cache: EncoderCache,
                     grad_z: np.ndarray) -> Dict[str, np.ndarray]:
    """Back-propagation through time; returns gradients keyed like params.body_arrays()."""
    if params.kind == PRECOMPUTED:
        return {}
    hidden = cache.hidden
    steps = hidden.shape[0]
    grads = {"W_out": np.outer(grad_z, cache.pooled), "b_out": grad_z.copy()}
    grad_pooled = params.W_out.T @ grad_z
    direct = np.zeros_like(hidden)
    if params.modality is Modality.TEXT:
        direct[-1] = grad_pooled
    else:
        direct[:] = grad_pooled / steps
    grad_pre = np.empty_like(hidden)
    carry = np.zeros(hidden.shape[1])
    for t in range(steps - 1, -1, -1):
        grad_h = direct[t] + carry
        grad_pre[t] = grad_h * (1.0 - hidden[t] * hidden[t])
        carry = params.W_rec.T @ grad_pre[t]
    previous = np.vstack([np.zeros((1, hidden.shape[1])), hidden[:-1]])
    grads["W_in"] = grad_pre.T @ cache.inputs
    grads["b_in"] = grad_pre.sum(axis=0)
    grads["W_rec"] = grad_pre.T @ previous
    if params.modality is Modality.TEXT:
        grad_inputs = grad_pre @ params.W_in
        grad_embedding = np.zeros_like(params.embedding)
        np.add.at(grad_embedding, cache.token_ids, grad_inputs)
        grads["embedding"] = grad_embedding
    return grads


def encode(modality: Modality, inp: ModalInput, params: EncoderParams) -> np.ndarray:
    """
    Map raw modality input X_k to its feature z_k.

    Args:
        modality: T, A or V; must match the parameters
        inp: TextInput, AudioInput, VideoInput or PrecomputedInput
        params: Encoder parameters

    Returns:
        Feature vector of width params.feature_dim
    """
    if Modality(modality) is not params.modality:
        raise DataError(f"Parameters encode {params.modality.title}, not {Modality(modality).title}")
    z, _ = encoder_forward(params, inp)
    return z


def unimodal_logits(params: EncoderParams, inp: ModalInput) -> np.ndarray:
    """Encoder followed by its stage-1 head."""
    z, _ = encoder_forward(params, inp)
    logits, _ = mlp_forward(z, params.head)
    return logits


# Precomputed feature records

def load_precomputed(record: dict, dim: int = DEFAULT_FEATURE_DIM) -> np.ndarray:
    """
    Validate a feature record {utt_id, word_idx, modality, dim, values} and return its vector.

    Raises:
        DimensionError: If the stored width is not `dim`
        DataError: If fields are missing or values are not finite
    """
    for key in ("modality", "values"):
        if key not in record:
            raise DataError(f"Feature record is missing {key!r}")
    try:
        Modality(record["modality"])
    except ValueError:
        raise DataError(f"Unknown modality {record['modality']!r} in feature record")
    values = np.asarray(record["values"], dtype=np.float64)
    if values.ndim != 1 or values.shape[0] != dim:
        raise DimensionError("precomputed feature", dim, values.shape[0] if values.ndim == 1 else values.shape)
    if "dim" in record and int(record["dim"]) != values.shape[0]:
        raise DataError(f"Feature record declares dim {record['dim']} but holds {values.shape[0]} values")
    if not np.all(np.isfinite(values)):
        raise DataError("Feature record contains non-finite values")
    return values


def write_precomputed(path: str, records: Iterable[Tuple[str, int, Modality, np.ndarray]]) -> int:
    """Write feature records as JSON Lines; returns the number written."""
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for utt_id, word_idx, modality, vector in records:
            vector = np.asarray(vector, dtype=np.float64)
            record = {"utt_id": utt_id, "word_idx": int(word_idx), "modality": Modality(modality).value,
                      "dim": int(vector.shape[0]), "values": [float(v) for v in vector]}
            f.write(json.dumps(record) + "\n")
            count += 1
    return count


def read_precomputed(path: str, dim: int = DEFAULT_FEATURE_DIM) -> Dict[Tuple[str, int, Modality], np.ndarray]:
    """
    Load a feature file into {(utt_id, word_idx, modality): vector}.

    Raises:
        ManifestError: With the line number of the first bad record
    """
    index = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                vector = load_precomputed(record, dim)
                key = (str(record["utt_id"]), int(record["word_idx"]), Modality(record["modality"]))
            except (ValueError, KeyError, TypeError, DataError) as e:
                raise ManifestError(str(e), line_no, path) from e
            index[key] = vector
    logger.info("Loaded %d precomputed feature records from %s", len(index), path)
    return index
