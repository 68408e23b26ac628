# checkpoint.py

"""
Checkpoint files: one JSON document holding the architecture, vocabulary,
stage flags, provenance, optimizer hyperparameters and every parameter array.

Keys are sorted and floats use their shortest round-trip form, so saving the
same bundle twice yields byte-identical files.
"""

import json
import logging
import os
from typing import Any, Dict, Optional

import numpy as np

from .bundle import ModelBundle
from .config import ModelConfig, TrainConfig
from .encoders import PRECOMPUTED, RECURRENT, EncoderParams, Vocabulary
from .fusion import FusionParams
from .models import MODALITIES, DataError, Modality, SchemaVersionError
from .numeric import MlpParams

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _encode_array(a: np.ndarray) -> Dict[str, Any]:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "values": [float(v) for v in a.ravel()]}


def _decode_array(record: Dict[str, Any], name: str) -> np.ndarray:
    try:
        values = np.asarray(record["values"], dtype=np.float64)
        return values.reshape(tuple(int(s) for s in record["shape"]))
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"Checkpoint array {name} is malformed: {e}")


def _mlp_record(params: MlpParams) -> Dict[str, Any]:
    return {k: _encode_array(v) for k, v in params.arrays().items()}


def _mlp_from(record: Dict[str, Any], name: str) -> MlpParams:
    return MlpParams.from_arrays({k: _decode_array(v, f"{name}.{k}") for k, v in record.items()})


def bundle_to_document(bundle: ModelBundle, train_config: Optional[TrainConfig] = None) -> Dict[str, Any]:
    encoders = {}
    for m in MODALITIES:
        enc = bundle.encoders[m]
        encoders[m.value] = {
            "kind": enc.kind,
            "body": {k: _encode_array(v) for k, v in enc.body_arrays().items()},
            "head": _mlp_record(enc.head),
        }
    document = {
        "format_version": FORMAT_VERSION,
        "model_config": bundle.config.to_dict(),
        "vocabulary": list(bundle.vocabulary.tokens),
        "encoders": encoders,
        "fusion": {
            "factors": {m.value: _encode_array(bundle.fusion.factors[m]) for m in MODALITIES},
            "head": _mlp_record(bundle.fusion.head),
        },
        "stages": bundle.stages,
        "provenance": bundle.provenance,
    }
    if train_config is not None:
        document["train_config"] = train_config.to_dict()
        document["adam"] = {"learning_rate": train_config.learning_rate, "beta1": train_config.beta1,
                            "beta2": train_config.beta2, "epsilon": train_config.epsilon}
    return document


def bundle_from_document(document: Dict[str, Any]) -> ModelBundle:
    version = document.get("format_version")
    if version != FORMAT_VERSION:
        raise SchemaVersionError(f"Unsupported checkpoint format_version {version!r} "
                                 f"(expected {FORMAT_VERSION})")
    try:
        config = ModelConfig.from_dict(document["model_config"])
        vocabulary = Vocabulary(tuple(document["vocabulary"]))
        encoders = {}
        for m in MODALITIES:
            record = document["encoders"][m.value]
            kind = record["kind"]
            if kind not in (RECURRENT, PRECOMPUTED):
                raise DataError(f"Unknown encoder kind {kind!r} for {m.title}")
            body = {k: _decode_array(v, f"{m.value}.{k}") for k, v in record["body"].items()}
            encoders[m] = EncoderParams(m, kind, _mlp_from(record["head"], f"{m.value}.head"), **body)
        factors = {Modality(k): _decode_array(v, f"factor.{k}")
                   for k, v in document["fusion"]["factors"].items()}
        fusion = FusionParams(factors, _mlp_from(document["fusion"]["head"], "fusion.head"))
        return ModelBundle(config, vocabulary, encoders, fusion,
                           dict(document.get("stages", {})), dict(document.get("provenance", {})))
    except KeyError as e:
        raise DataError(f"Checkpoint is missing field {e}")


def save_checkpoint(bundle: ModelBundle, path: str, train_config: Optional[TrainConfig] = None) -> str:
    """Write the bundle atomically (temp file, then rename); returns the path."""
    text = json.dumps(bundle_to_document(bundle, train_config), sort_keys=True, separators=(",", ":"))
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text + "\n")
    os.replace(tmp, path)
    logger.info("Saved checkpoint to %s", path)
    return path


def load_checkpoint(path: str) -> ModelBundle:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        FileNotFoundError: If the file does not exist
        SchemaVersionError: If it was written by an unsupported format version
        DataError: If it is not valid JSON or misses fields
    """
    with open(path, "r", encoding="utf-8") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"Checkpoint {path} is not valid JSON: {e}")
    bundle = bundle_from_document(document)
    logger.info("Loaded checkpoint %s (stages %s)", path, bundle.stages)
    return bundle


def checkpoint_id(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]
