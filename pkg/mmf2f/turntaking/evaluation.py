# evaluation.py

"""
Accuracy, per-class F1 and confusion matrices, the modality ablation
runner, and the Bayes-oracle calibration row.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics import confusion_matrix

from .bundle import ModelBundle, predict_distribution
from .dataset import Sample
from .models import ACTIONS, Action, ActionDistribution, DataError, ModalityMask
from .synthetic import SyntheticConfig, bayes_oracle

logger = logging.getLogger(__name__)

LABELS = [int(a) for a in ACTIONS]


@dataclass(frozen=True)
class ConfusionMatrix:
    """3x3 counts; rows are true labels, columns predictions (KEEP, TURN, BACKCHANNEL)."""
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (3, 3):
            raise DataError(f"Confusion matrix must be 3x3, got {counts.shape}")
        if (counts < 0).any():
            raise DataError("Confusion matrix counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else 0.0

    def f1(self, action: Action) -> float:
        """F1 of one class; 0/0 anywhere counts as 0."""
        c = int(action)
        tp = float(self.counts[c, c])
        predicted = float(self.counts[:, c].sum())
        actual = float(self.counts[c, :].sum())
        precision = tp / predicted if predicted else 0.0
        recall = tp / actual if actual else 0.0
        if precision + recall == 0.0:
            return 0.0
        return 2.0 * precision * recall / (precision + recall)

    @property
    def macro_f1(self) -> float:
        return float(np.mean([self.f1(a) for a in ACTIONS]))

    def metrics(self) -> Dict[str, float]:
        return {"accuracy": self.accuracy,
                "f1_keep": self.f1(Action.KEEP),
                "f1_turn": self.f1(Action.TURN),
                "f1_bc": self.f1(Action.BACKCHANNEL),
                "macro_f1": self.macro_f1}


def confusion_from_labels(y_true: Sequence[int], y_pred: Sequence[int]) -> ConfusionMatrix:
    """Confusion matrix with the fixed label order KEEP, TURN, BACKCHANNEL."""
    if len(y_true) != len(y_pred):
        raise DataError(f"{len(y_true)} labels but {len(y_pred)} predictions")
    if len(y_true) == 0:
        return ConfusionMatrix(np.zeros((3, 3), dtype=np.int64))
    return ConfusionMatrix(confusion_matrix([int(y) for y in y_true], [int(y) for y in y_pred],
                                            labels=LABELS))


@dataclass(frozen=True)
class EvalReport:
    """
    One evaluated modality combination.

    Attributes:
        modalities: Combination the model was asked to use
        accuracy: Micro accuracy over samples
        f1_keep, f1_turn, f1_bc: Per-class F1
        samples: Evaluated sample count
        checkpoint_id: Name of the evaluated checkpoint
        confusion: Underlying counts
        dropped: Samples on which some requested modality was missing from the data
    """
    modalities: ModalityMask
    accuracy: float
    f1_keep: float
    f1_turn: float
    f1_bc: float
    samples: int
    checkpoint_id: str
    confusion: ConfusionMatrix
    dropped: int = 0

    @property
    def macro_f1(self) -> float:
        return (self.f1_keep + self.f1_turn + self.f1_bc) / 3.0

    @classmethod
    def from_confusion(cls, modalities: ModalityMask, confusion: ConfusionMatrix,
                       checkpoint_id: str, dropped: int = 0) -> "EvalReport":
        m = confusion.metrics()
        return cls(modalities, m["accuracy"], m["f1_keep"], m["f1_turn"], m["f1_bc"],
                   confusion.total, checkpoint_id, confusion, dropped)

    def to_record(self) -> dict:
        return {
            "modalities": self.modalities.code,
            "label": self.modalities.label,
            "accuracy": self.accuracy,
            "f1_keep": self.f1_keep,
            "f1_turn": self.f1_turn,
            "f1_bc": self.f1_bc,
            "macro_f1": self.macro_f1,
            "samples": self.samples,
            "dropped": self.dropped,
            "checkpoint_id": self.checkpoint_id,
            "confusion": self.confusion.counts.tolist(),
        }


def _score(samples: Sequence[Sample], mask: ModalityMask,
           predictor: Callable[[Sample, ModalityMask], ActionDistribution],
           checkpoint_id: str) -> EvalReport:
    if not samples:
        raise DataError("Cannot evaluate an empty dataset")
    if mask.is_empty:
        raise DataError("Cannot evaluate with an empty modality mask")
    y_true, y_pred = [], []
    dropped = 0
    for s in samples:
        if s.label is None:
            raise DataError(f"Sample {s.utt_id}/{s.word_idx} is unlabeled")
        if (mask & s.available) != mask:
            dropped += 1
        y_true.append(int(s.label))
        y_pred.append(int(predictor(s, mask).argmax()))
    if dropped:
        logger.warning("%d of %d samples lack some of %s; evaluated on what is present",
                       dropped, len(samples), mask.label)
    return EvalReport.from_confusion(mask, confusion_from_labels(y_true, y_pred), checkpoint_id, dropped)


def evaluate(model: ModelBundle, samples: Sequence[Sample], mask: ModalityMask,
             checkpoint_id: str = "") -> EvalReport:
    """
    Argmax decisions of the model on every sample under a modality mask.

    Modalities missing from a sample are dropped from that sample's mask and
    counted in `dropped`; a single remaining modality uses its stage-1 head.

    Raises:
        DataError: On an empty or unlabeled dataset, or a sample with none of the requested modalities
    """
    def predictor(s: Sample, m: ModalityMask) -> ActionDistribution:
        if (m & s.available).is_empty:
            raise DataError(f"Sample {s.utt_id}/{s.word_idx} has none of the modalities {m.label}")
        return predict_distribution(model, s, m)

    return _score(samples, mask, predictor, checkpoint_id)


def run_ablation(model: ModelBundle, samples: Sequence[Sample], combos: Sequence[ModalityMask],
                 checkpoint_id: str = "") -> List[EvalReport]:
    """One report per modality combination, all from the same parameters."""
    if not combos:
        raise DataError("Ablation needs at least one modality combination")
    reports = [evaluate(model, samples, mask, checkpoint_id) for mask in combos]
    for r in reports:
        logger.info("%-18s acc=%.4f macro_f1=%.4f", r.modalities.label, r.accuracy, r.macro_f1)
    return reports


def evaluate_oracle(samples: Sequence[Sample], mask: ModalityMask, cfg: SyntheticConfig,
                    checkpoint_id: str = "bayes-oracle") -> EvalReport:
    """Report for the Bayes posterior of the synthetic generator `cfg`."""
    return _score(samples, mask, lambda s, m: bayes_oracle(s, m & s.available, cfg), checkpoint_id)


def distribution_metrics(labels: Sequence[int], probs: Sequence[np.ndarray]) -> Dict[str, float]:
    """Argmax metrics of collected probability vectors, as logged per training epoch."""
    preds = [int(np.argmax(p)) for p in probs]
    return confusion_from_labels(list(labels), preds).metrics()


def parse_combos(text: Optional[str]) -> List[ModalityMask]:
    """'all' gives the seven non-empty combinations; otherwise comma-separated codes like 'T,TA,TAV'."""
    if text is None or text.strip().lower() == "all":
        return list(ModalityMask.all_nonempty())
    return [ModalityMask.parse(code.strip()) for code in text.split(",") if code.strip()]
