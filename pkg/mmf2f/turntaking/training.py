# training.py

"""
Two-stage training.

Stage 1 trains each uni-modal encoder with its own prediction head. Stage 2
trains encoders, fusion factors and a fresh fusion head end to end, drawing
a random-modality-dropout mask for every sample.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .bundle import (ModelBundle, effective_mask, joint_loss_and_grads, predict_distribution,
                     unimodal_loss_and_grads)
from .config import TrainConfig
from .dataset import Sample
from .encoders import EncoderParams, unimodal_logits
from .evaluation import distribution_metrics
from .logger import EventLogger, log_epoch, log_rmdt_masks, log_skipped_samples
from .models import MODALITIES, ConfigError, DataError, Modality, ModalityMask, NumericError
from .numeric import AdamState, adam_step, make_rng, softmax, spawn_rngs

logger = logging.getLogger(__name__)

Arrays = Dict[str, np.ndarray]


def rmdt_sample(rng: np.random.Generator, p: float) -> ModalityMask:
    """
    Random modality dropout draw.

    With probability p one modality, chosen uniformly, is marked absent;
    otherwise all three are present. Never returns an empty mask.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"Dropout probability must lie in [0, 1], got {p}")
    if rng.random() < p:
        return ModalityMask.full().without(MODALITIES[int(rng.integers(3))])
    return ModalityMask.full()


@dataclass
class UnimodalResult:
    """Trained encoder (with head), mean training loss per epoch, and samples skipped for lacking the modality."""
    params: EncoderParams
    loss_trace: List[float] = field(default_factory=list)
    skipped: int = 0


@dataclass
class JointResult:
    """Trained bundle, mean training loss per epoch, and how often each effective mask was used."""
    bundle: ModelBundle
    loss_trace: List[float] = field(default_factory=list)
    mask_counts: Dict[str, int] = field(default_factory=dict)


def _check_finite(loss: float, grads: Arrays, where: str) -> None:
    if not np.isfinite(loss):
        raise NumericError(f"Non-finite loss {loss} at {where}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"Non-finite gradient for {name} at {where}")


def _accumulate(summed: Arrays, grads: Arrays) -> None:
    for name, g in grads.items():
        summed[name] = summed[name] + g if name in summed else g.copy()


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def _adam(params: Arrays, cfg: TrainConfig) -> AdamState:
    return AdamState.create(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)


def _validate_unimodal(params: EncoderParams, samples: Sequence[Sample]):
    labels, probs, losses = [], [], []
    for s in samples:
        p = softmax(unimodal_logits(params, s.input_for(params.modality)))
        labels.append(int(s.label))
        probs.append(p)
        losses.append(-np.log(max(p[int(s.label)], 1e-300)))
    return float(np.mean(losses)), distribution_metrics(labels, probs)


def train_unimodal(samples: Sequence[Sample], modality: Modality, params: EncoderParams,
                   cfg: TrainConfig, events: Optional[EventLogger] = None,
                   valid: Optional[Sequence[Sample]] = None) -> UnimodalResult:
    """
    Stage 1: fit one encoder and its head by cross-entropy with Adam.

    Samples lacking the modality are skipped and counted.

    Args:
        samples: Labeled training samples
        modality: Modality to train
        params: Initial encoder parameters for that modality
        cfg: Optimisation settings (learning rate, epochs, batch size, seed)
        events: Receives one EPOCH record per epoch and split
        valid: Optional held-out samples scored after every epoch

    Raises:
        DataError: If no sample carries the modality
        NumericError: If a loss or gradient becomes non-finite
    """
    modality = Modality(modality)
    if params.modality is not modality:
        raise ConfigError(f"Encoder is for {params.modality.title}, not {modality.title}")
    usable = [s for s in samples if modality in s.available]
    skipped = len(samples) - len(usable)
    if not usable:
        raise DataError(f"No training samples carry the {modality.title} modality")
    if any(s.label is None for s in usable):
        raise DataError("Training samples must be labeled")
    if skipped:
        logger.warning("Skipping %d samples without %s", skipped, modality.title)
        if events is not None:
            log_skipped_samples(events, "unimodal", modality.value, skipped, "modality absent")

    arrays = params.arrays()
    state = _adam(arrays, cfg)
    rng = make_rng(cfg.seed)
    trace = []
    current = params
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(usable))
        losses, labels, probs = [], [], []
        for batch in _batches(order, cfg.batch_size):
            summed: Arrays = {}
            for idx in batch:
                s = usable[int(idx)]
                loss, p, grads = unimodal_loss_and_grads(current, s)
                _check_finite(loss, grads, f"{modality.value} epoch {epoch} sample {s.utt_id}/{s.word_idx}")
                _accumulate(summed, grads)
                losses.append(loss)
                labels.append(int(s.label))
                probs.append(p)
            if not summed:
                continue
            mean_grads = {k: v / len(batch) for k, v in summed.items()}
            arrays, state = adam_step(arrays, mean_grads, state)
            current = current.with_arrays(arrays)
        mean_loss = float(np.mean(losses))
        trace.append(mean_loss)
        logger.info("stage 1 %s epoch %d loss %.4f", modality.title, epoch, mean_loss)
        if events is not None:
            log_epoch(events, "unimodal", modality.value, epoch, "train", mean_loss,
                      distribution_metrics(labels, probs), len(usable))
            if valid:
                held = [s for s in valid if modality in s.available]
                if held:
                    v_loss, v_metrics = _validate_unimodal(current, held)
                    log_epoch(events, "unimodal", modality.value, epoch, "valid", v_loss, v_metrics, len(held))
    return UnimodalResult(current, trace, skipped)


def train_bundle_unimodal(samples: Sequence[Sample], bundle: ModelBundle, modality: Modality,
                          cfg: TrainConfig, events: Optional[EventLogger] = None,
                          valid: Optional[Sequence[Sample]] = None) -> ModelBundle:
    """Run stage 1 for one modality and record it in the bundle's stage flags."""
    modality = Modality(modality)
    result = train_unimodal(samples, modality, bundle.encoders[modality], cfg, events, valid)
    encoders = dict(bundle.encoders)
    encoders[modality] = result.params
    stages = dict(bundle.stages)
    stages["unimodal"] = sorted(set(stages.get("unimodal", [])) | {modality.value},
                                key=lambda code: "TAV".index(code))
    provenance = dict(bundle.provenance)
    provenance[f"unimodal.{modality.value}"] = cfg.to_dict()
    return ModelBundle(bundle.config, bundle.vocabulary, encoders, bundle.fusion, stages, provenance)


def _validate_joint(bundle: ModelBundle, samples: Sequence[Sample], mask: ModalityMask):
    labels, probs, losses = [], [], []
    for s in samples:
        p = predict_distribution(bundle, s, mask).as_array()
        labels.append(int(s.label))
        probs.append(p)
        losses.append(-np.log(max(p[int(s.label)], 1e-300)))
    return float(np.mean(losses)), distribution_metrics(labels, probs)


def train_joint(samples: Sequence[Sample], bundle: ModelBundle, cfg: TrainConfig,
                events: Optional[EventLogger] = None,
                valid: Optional[Sequence[Sample]] = None) -> JointResult:
    """
    Stage 2: end-to-end training of encoders, fusion factors and fusion head.

    Every sample draws a dropout mask; the mask actually used is that draw
    intersected with the training subset and the sample's available
    modalities. Precomputed encoders pass features through and only their
    stage-1 heads (unused here) carry parameters, so nothing of theirs is updated.

    A draw that leaves a single modality falls back to the undropped subset. A
    sample with only one of the training modalities is skipped: single modalities
    route to their stage-1 heads, so the fused path never sees them.

    Raises:
        ConfigError: If cfg.modalities names fewer than two modalities, or stage 1 has not
            run for a trained modality and cfg.from_scratch is off
        DataError: If the dataset is empty, some sample has none of the training modalities,
            or no sample has two of them
        NumericError: If a loss or gradient becomes non-finite
    """
    if not samples:
        raise DataError("Cannot train on an empty dataset")
    if len(cfg.modalities) < 2:
        raise ConfigError(f"Joint training needs at least two modalities, got {cfg.modalities.label}; "
                          f"use stage-1 training for a single modality")
    if not cfg.from_scratch:
        missing = [m.title for m in cfg.modalities if not bundle.is_stage1_trained(m)]
        if missing:
            raise ConfigError(f"Stage 1 has not been run for {', '.join(missing)}; "
                              f"train them first or allow training from scratch")
    for s in samples:
        if s.label is None:
            raise DataError(f"Sample {s.utt_id}/{s.word_idx} is unlabeled")
        if effective_mask(s, cfg.modalities).is_empty:
            raise DataError(f"Sample {s.utt_id}/{s.word_idx} has none of the modalities "
                            f"{cfg.modalities.label}")
    if all(len(effective_mask(s, cfg.modalities)) < 2 for s in samples):
        raise DataError(f"No sample carries two of the modalities {cfg.modalities.label}")

    arrays = bundle.arrays()
    state = _adam(arrays, cfg)
    shuffle_rng, drop_rng = spawn_rngs(cfg.seed, 2)
    trace = []
    totals: Counter = Counter()
    current = bundle
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(samples))
        losses, labels, probs = [], [], []
        counts: Counter = Counter()
        skipped = 0
        for batch in _batches(order, cfg.batch_size):
            summed: Arrays = {}
            for idx in batch:
                s = samples[int(idx)]
                drawn = rmdt_sample(drop_rng, cfg.dropout_p)
                mask = effective_mask(s, drawn & cfg.modalities)
                if len(mask) < 2:
                    mask = effective_mask(s, cfg.modalities)
                if len(mask) < 2:
                    skipped += 1
                    continue
                counts[mask.code] += 1
                loss, p, grads = joint_loss_and_grads(current, s, mask, cfg.train_encoders, cfg.train_factors)
                _check_finite(loss, grads, f"joint epoch {epoch} sample {s.utt_id}/{s.word_idx}")
                _accumulate(summed, grads)
                losses.append(loss)
                labels.append(int(s.label))
                probs.append(p)
            if not summed:
                continue
            mean_grads = {k: v / len(batch) for k, v in summed.items()}
            arrays, state = adam_step(arrays, mean_grads, state)
            current = current.with_arrays(arrays)
        mean_loss = float(np.mean(losses))
        trace.append(mean_loss)
        totals.update(counts)
        logger.info("stage 2 epoch %d loss %.4f masks %s skipped %d", epoch, mean_loss,
                    dict(sorted(counts.items())), skipped)
        if events is not None:
            log_epoch(events, "joint", cfg.modalities.code, epoch, "train", mean_loss,
                      distribution_metrics(labels, probs), len(samples))
            log_rmdt_masks(events, epoch, dict(counts))
            if valid:
                v_loss, v_metrics = _validate_joint(current, valid, cfg.modalities)
                log_epoch(events, "joint", cfg.modalities.code, epoch, "valid", v_loss, v_metrics, len(valid))

    stages = dict(current.stages)
    stages["joint"] = True
    stages["dropout_p"] = cfg.dropout_p
    stages["joint_modalities"] = cfg.modalities.code
    provenance = dict(current.provenance)
    provenance["joint"] = cfg.to_dict()
    trained = ModelBundle(current.config, current.vocabulary, current.encoders, current.fusion,
                          stages, provenance)
    return JointResult(trained, trace, dict(sorted(totals.items())))
