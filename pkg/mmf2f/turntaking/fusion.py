# fusion.py

"""
Flexible low-rank multi-modal fusion with modality selection.

The fusion weight tensor W = sum_i (w_T^(i) x w_A^(i) x w_V^(i)) is never built
during training. Each present modality contributes a rank-term
w_k^(i) z_k (one row per rank component); an absent modality contributes the
ones vector. The fused feature is the element-wise product of the terms in the
order T, A, V, summed over rank components.
"""

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .models import (MODALITIES, ActionDistribution, ConfigError, DimensionError,
                     Modality, ModalityMask)
from .numeric import MlpParams, init_mlp, mlp_forward, softmax

MAX_ORACLE_ENTRIES = 10 ** 6


@dataclass
class FusionParams:
    """
    Low-rank factors for each modality plus the fusion prediction head.

    Attributes:
        factors: Modality -> array of shape (rank, d_h, d_k)
        head: Prediction head, input width d_h
    """
    factors: Dict[Modality, np.ndarray]
    head: MlpParams

    def __post_init__(self):
        missing = [m.value for m in MODALITIES if m not in self.factors]
        if missing:
            raise ConfigError(f"Fusion factors missing for modalities {missing}")
        shapes = {m: self.factors[m].shape for m in MODALITIES}
        if any(len(s) != 3 for s in shapes.values()):
            raise ConfigError(f"Fusion factors must be (rank, d_h, d_k) arrays, got {shapes}")
        ranks = {s[0] for s in shapes.values()}
        dims = {s[1] for s in shapes.values()}
        if len(ranks) != 1 or min(ranks) < 1:
            raise ConfigError(f"All modalities need the same rank >= 1, got {shapes}")
        if len(dims) != 1:
            raise ConfigError(f"All modalities need the same fused width d_h, got {shapes}")
        if self.head.sizes[0] != self.fusion_dim:
            raise DimensionError("fusion head input", self.fusion_dim, self.head.sizes[0])

    @property
    def rank(self) -> int:
        return self.factors[Modality.TEXT].shape[0]

    @property
    def fusion_dim(self) -> int:
        return self.factors[Modality.TEXT].shape[1]

    @property
    def feature_dims(self) -> Dict[Modality, int]:
        return {m: self.factors[m].shape[2] for m in MODALITIES}

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {f"factor.{m.value}": self.factors[m] for m in MODALITIES}
        out.update({f"head.{k}": v for k, v in self.head.arrays().items()})
        return out

    def with_arrays(self, arrays: Mapping[str, np.ndarray]) -> "FusionParams":
        merged = self.arrays()
        merged.update(arrays)
        factors = {m: merged[f"factor.{m.value}"] for m in MODALITIES}
        head = MlpParams.from_arrays({k[len("head."):]: v for k, v in merged.items()
                                      if k.startswith("head.")})
        return FusionParams(factors, head)


def init_fusion(feature_dims: Mapping[Modality, int], rng: np.random.Generator, fusion_dim: int = 256,
                rank: int = 16, head_sizes: Sequence[int] = (256, 64, 3)) -> FusionParams:
    """
    Seeded fusion parameters: Glorot-uniform factors and a fresh head.

    Args:
        feature_dims: d_k for each modality
        rng: Random stream
        fusion_dim: d_h
        rank: Number of rank components r
        head_sizes: Prediction head sizes, starting at d_h
    """
    if rank < 1:
        raise ConfigError(f"Rank must be at least 1, got {rank}")
    factors = {}
    for m in MODALITIES:
        d_k = int(feature_dims[m])
        bound = np.sqrt(6.0 / (fusion_dim + d_k))
        factors[m] = rng.uniform(-bound, bound, size=(rank, fusion_dim, d_k))
    return FusionParams(factors, init_mlp(head_sizes, rng))


@dataclass
class FusionCache:
    features: Dict[Modality, np.ndarray]
    terms: Dict[Modality, np.ndarray]
    mask: ModalityMask


def rank_terms(z: np.ndarray, factor: np.ndarray) -> np.ndarray:
    """w^(i) z for every rank component i, shape (rank, d_h)."""
    return factor @ z


def fuse_terms(terms: Mapping[Modality, np.ndarray]) -> np.ndarray:
    """Element-wise product of the per-modality terms in the order T, A, V, summed over rank."""
    product = terms[Modality.TEXT] * terms[Modality.AUDIO] * terms[Modality.VIDEO]
    return product.sum(axis=0)


def _check_features(features: Mapping[Modality, Optional[np.ndarray]], mask: ModalityMask,
                    params: FusionParams) -> None:
    if mask.is_empty:
        raise ConfigError("Cannot fuse with every modality absent")
    for m in MODALITIES:
        z = features.get(m)
        if (m in mask) != (z is not None):
            state = "present" if m in mask else "absent"
            raise ConfigError(f"Mask says {m.title} is {state} but a feature was "
                              f"{'not ' if z is None else ''}supplied")
        if z is not None and np.shape(z) != (params.feature_dims[m],):
            raise DimensionError(f"{m.title} feature", params.feature_dims[m], np.shape(z))


def fuse_forward(features: Mapping[Modality, Optional[np.ndarray]], mask: ModalityMask,
                 params: FusionParams) -> Tuple[np.ndarray, FusionCache]:
    """Fused feature h plus the cache used by fuse_backward."""
    _check_features(features, mask, params)
    ones = np.ones((params.rank, params.fusion_dim))
    terms = {}
    for m in MODALITIES:
        terms[m] = rank_terms(features[m], params.factors[m]) if m in mask else ones
    h = fuse_terms(terms)
    kept = {m: np.asarray(features[m], dtype=np.float64) for m in mask}
    return h, FusionCache(kept, terms, mask)


def fuse(z_text: Optional[np.ndarray], z_audio: Optional[np.ndarray], z_video: Optional[np.ndarray],
         mask: ModalityMask, params: FusionParams) -> np.ndarray:
    """
    Fuse the present modal features into h (width d_h).

    Args:
        z_text, z_audio, z_video: Modal features; None exactly where the mask is false
        mask: Which modalities are present
        params: Fusion parameters

    Raises:
        ConfigError: If features disagree with the mask or the mask is empty
        DimensionError: If a feature width differs from its factor's d_k
    """
    features = {Modality.TEXT: z_text, Modality.AUDIO: z_audio, Modality.VIDEO: z_video}
    h, _ = fuse_forward(features, mask, params)
    return h


def fuse_backward(grad_h: np.ndarray, cache: FusionCache,
                  params: FusionParams) -> Tuple[Dict[str, np.ndarray], Dict[Modality, np.ndarray]]:
    """
    Gradients of the fused feature.

    Returns:
        (factor gradients keyed 'factor.<k>' for present modalities,
         feature gradients keyed by modality)
    """
    factor_grads = {}
    feature_grads = {}
    for m in cache.mask:
        others = np.ones_like(cache.terms[m])
        for other in MODALITIES:
            if other is not m:
                others = others * cache.terms[other]
        grad_term = grad_h[None, :] * others
        z = cache.features[m]
        factor_grads[f"factor.{m.value}"] = grad_term[:, :, None] * z[None, None, :]
        feature_grads[m] = np.einsum("ihd,ih->d", params.factors[m], grad_term)
    return factor_grads, feature_grads


@dataclass
class FullFusionOracle:
    """
    Explicit weight tensor of the general tensor-fusion form h = W . Z + b.

    Attributes:
        weight: Shape (d_h, d_T, d_A, d_V)
        bias: Shape (d_h,), zero for tensors rebuilt from low-rank factors
    """
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.size > MAX_ORACLE_ENTRIES:
            raise ConfigError(f"Full fusion tensor would hold {self.weight.size} entries "
                              f"(limit {MAX_ORACLE_ENTRIES})")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError("oracle bias", self.weight.shape[0], self.bias.shape)


def reconstruct_full_weight(params: FusionParams) -> FullFusionOracle:
    """W[h, a, b, c] = sum_i w_T^(i)[h, a] w_A^(i)[h, b] w_V^(i)[h, c], with zero bias."""
    d_h = params.fusion_dim
    dims = params.feature_dims
    entries = d_h * dims[Modality.TEXT] * dims[Modality.AUDIO] * dims[Modality.VIDEO]
    if entries > MAX_ORACLE_ENTRIES:
        raise ConfigError(f"Full fusion tensor would hold {entries} entries "
                          f"(limit {MAX_ORACLE_ENTRIES})")
    weight = np.einsum("iha,ihb,ihc->habc", params.factors[Modality.TEXT],
                       params.factors[Modality.AUDIO], params.factors[Modality.VIDEO])
    return FullFusionOracle(weight, np.zeros(d_h))


def fuse_via_full_tensor(z_text: np.ndarray, z_audio: np.ndarray, z_video: np.ndarray,
                         oracle: FullFusionOracle) -> np.ndarray:
    """h[j] = sum_{a,b,c} W[j, a, b, c] z_T[a] z_A[b] z_V[c] + b[j]."""
    _, d_t, d_a, d_v = oracle.weight.shape
    for name, z, d in (("Text", z_text, d_t), ("Audio", z_audio, d_a), ("Video", z_video, d_v)):
        if np.shape(z) != (d,):
            raise DimensionError(f"{name} feature", d, np.shape(z))
    return np.einsum("habc,a,b,c->h", oracle.weight, z_text, z_audio, z_video) + oracle.bias


def fusion_logits(h: np.ndarray, params: FusionParams) -> np.ndarray:
    if np.shape(h) != (params.fusion_dim,):
        raise DimensionError("fused feature", params.fusion_dim, np.shape(h))
    logits, _ = mlp_forward(h, params.head)
    return logits


def predict(h: np.ndarray, params: FusionParams) -> ActionDistribution:
    """Action probabilities softmax(head(h))."""
    return ActionDistribution.from_array(softmax(fusion_logits(h, params)))
