# bundle.py

"""
The complete model: three encoders (each with its stage-1 head), the fusion
module, the vocabulary, and how they were trained.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from .config import ModelConfig
from .dataset import Sample
from .encoders import (PRECOMPUTED, EncoderParams, Vocabulary, encoder_backward, encoder_forward,
                       init_encoder, init_precomputed_encoder)
from .fusion import FusionParams, fuse_backward, fuse_forward, init_fusion
from .models import (MODALITIES, ActionDistribution, ConfigError, DimensionError, Modality,
                     ModalityMask)
from .numeric import mlp_backward, mlp_forward, softmax, softmax_cross_entropy, spawn_rngs

Arrays = Dict[str, np.ndarray]


@dataclass
class ModelBundle:
    """
    Everything needed to predict from any modality combination.

    Attributes:
        config: Architecture sizes
        vocabulary: Text word-to-id table
        encoders: Encoder parameters by modality
        fusion: Fusion factors and head
        stages: Which parts were trained ('unimodal' modality codes, 'joint', 'dropout_p')
        provenance: Free-form record of the commands and configs that produced the bundle
    """
    config: ModelConfig
    vocabulary: Vocabulary
    encoders: Dict[Modality, EncoderParams]
    fusion: FusionParams
    stages: Dict[str, Any] = field(default_factory=lambda: {"unimodal": [], "joint": False,
                                                            "dropout_p": None})
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for m in MODALITIES:
            enc = self.encoders.get(m)
            if enc is None:
                raise ConfigError(f"Bundle is missing the {m.title} encoder")
            if enc.feature_dim != self.fusion.feature_dims[m]:
                raise DimensionError(f"{m.title} encoder output vs fusion input",
                                     self.fusion.feature_dims[m], enc.feature_dim)

    def is_stage1_trained(self, modality: Modality) -> bool:
        return Modality(modality).value in self.stages.get("unimodal", [])

    def arrays(self) -> Arrays:
        out = {}
        for m in MODALITIES:
            out.update({f"encoder.{m.value}.{k}": v for k, v in self.encoders[m].arrays().items()})
        out.update({f"fusion.{k}": v for k, v in self.fusion.arrays().items()})
        return out

    def with_arrays(self, arrays: Arrays) -> "ModelBundle":
        """Copy with the named arrays replaced; unnamed arrays are shared."""
        encoders = {}
        for m in MODALITIES:
            prefix = f"encoder.{m.value}."
            sub = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
            encoders[m] = self.encoders[m].with_arrays(sub) if sub else self.encoders[m]
        sub = {k[len("fusion."):]: v for k, v in arrays.items() if k.startswith("fusion.")}
        fusion = self.fusion.with_arrays(sub) if sub else self.fusion
        return replace(self, encoders=encoders, fusion=fusion,
                       stages=dict(self.stages), provenance=dict(self.provenance))


def init_bundle(config: ModelConfig, vocabulary: Vocabulary, seed: int,
                precomputed: Sequence[Modality] = ()) -> ModelBundle:
    """
    Seeded, untrained bundle.

    Args:
        config: Architecture sizes
        vocabulary: Text vocabulary (its size must match config.vocab_size)
        seed: Initialisation seed
        precomputed: Modalities whose encoders pass stored features through
    """
    if vocabulary.size != config.vocab_size:
        raise ConfigError(f"Vocabulary has {vocabulary.size} ids but the config expects {config.vocab_size}")
    rngs = spawn_rngs(seed, 4)
    input_dims = {Modality.TEXT: config.text_embed_dim, Modality.AUDIO: config.audio_dim,
                  Modality.VIDEO: config.video_dim}
    encoders = {}
    for m, rng in zip(MODALITIES, rngs):
        if m in {Modality(p) for p in precomputed}:
            encoders[m] = init_precomputed_encoder(m, rng, config.feature_dim, config.unimodal_head_sizes)
        else:
            encoders[m] = init_encoder(m, input_dims[m], rng, config.hidden_dim, config.feature_dim,
                                       config.unimodal_head_sizes, config.vocab_size)
    fusion = init_fusion({m: config.feature_dim for m in MODALITIES}, rngs[3], config.fusion_dim,
                         config.rank, config.head_sizes)
    return ModelBundle(config, vocabulary, encoders, fusion)


def reinit_fusion(bundle: ModelBundle, seed: int, rank: Optional[int] = None) -> ModelBundle:
    """Fresh fusion factors and head (stage 2 starts from a new head), optionally at a new rank."""
    config = bundle.config if rank is None else bundle.config.with_rank(rank)
    fusion = init_fusion({m: config.feature_dim for m in MODALITIES}, spawn_rngs(seed, 4)[3],
                         config.fusion_dim, config.rank, config.head_sizes)
    return replace(bundle, config=config, fusion=fusion, stages=dict(bundle.stages),
                   provenance=dict(bundle.provenance))


def effective_mask(sample: Sample, mask: ModalityMask) -> ModalityMask:
    return mask & sample.available


def predict_distribution(bundle: ModelBundle, sample: Sample, mask: ModalityMask) -> ActionDistribution:
    """
    Route one sample through the model.

    A single present modality uses its stage-1 encoder and head; two or three
    modalities are encoded, fused and passed to the fusion head.

    Raises:
        ConfigError: If none of the requested modalities is available in the sample
    """
    mask = effective_mask(sample, mask)
    if mask.is_empty:
        raise ConfigError(f"Sample {sample.utt_id}/{sample.word_idx} has none of the requested modalities")
    features = {m: encoder_forward(bundle.encoders[m], sample.input_for(m))[0] for m in mask}
    return distribution_from_features(bundle, features, mask)


def distribution_from_features(bundle: ModelBundle, features: Dict[Modality, np.ndarray],
                               mask: ModalityMask) -> ActionDistribution:
    """Heads on already-encoded features: the stage-1 head for one modality, fusion otherwise."""
    if mask.is_empty:
        raise ConfigError("No modality to predict from")
    if len(mask) == 1:
        m = mask.present[0]
        logits, _ = mlp_forward(features[m], bundle.encoders[m].head)
        return ActionDistribution.from_array(softmax(logits))
    full = {m: (features[m] if m in mask else None) for m in MODALITIES}
    h, _ = fuse_forward(full, mask, bundle.fusion)
    logits, _ = mlp_forward(h, bundle.fusion.head)
    return ActionDistribution.from_array(softmax(logits))


def unimodal_loss_and_grads(params: EncoderParams, sample: Sample) -> Tuple[float, np.ndarray, Arrays]:
    """Cross-entropy of encoder + stage-1 head on one sample, with gradients named like params.arrays()."""
    z, cache = encoder_forward(params, sample.input_for(params.modality))
    logits, head_cache = mlp_forward(z, params.head)
    loss, probs, grad_logits = softmax_cross_entropy(logits, int(sample.label))
    head_grads, grad_z = mlp_backward(grad_logits, params.head, head_cache)
    grads = encoder_backward(params, cache, grad_z)
    grads.update({f"head.{k}": v for k, v in head_grads.arrays().items()})
    return loss, probs, grads


def joint_loss_and_grads(bundle: ModelBundle, sample: Sample, mask: ModalityMask,
                         train_encoders: bool = True,
                         train_factors: bool = True) -> Tuple[float, np.ndarray, Arrays]:
    """
    Cross-entropy of encoders -> fusion -> head on one sample under a modality mask.

    Gradients are named like bundle.arrays(); frozen groups are left out.
    """
    features = {m: None for m in MODALITIES}
    caches = {}
    for m in mask:
        features[m], caches[m] = encoder_forward(bundle.encoders[m], sample.input_for(m))
    h, fusion_cache = fuse_forward(features, mask, bundle.fusion)
    logits, head_cache = mlp_forward(h, bundle.fusion.head)
    loss, probs, grad_logits = softmax_cross_entropy(logits, int(sample.label))
    head_grads, grad_h = mlp_backward(grad_logits, bundle.fusion.head, head_cache)
    grads = {f"fusion.head.{k}": v for k, v in head_grads.arrays().items()}
    if train_factors or train_encoders:
        factor_grads, feature_grads = fuse_backward(grad_h, fusion_cache, bundle.fusion)
        if train_factors:
            grads.update({f"fusion.{k}": v for k, v in factor_grads.items()})
        if train_encoders:
            for m in mask:
                enc = bundle.encoders[m]
                if enc.kind == PRECOMPUTED:
                    continue
                body = encoder_backward(enc, caches[m], feature_grads[m])
                grads.update({f"encoder.{m.value}.{k}": v for k, v in body.items()})
    return loss, probs, grads
