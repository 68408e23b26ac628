# logger.py

import json
import logging
import os
from typing import Dict, List, Optional

import pandas as pd

console = logging.getLogger(__name__)


class EventLogger:
    """
    Records training and evaluation events (epoch metrics, dropout masks,
    skipped samples) and saves them as JSON Lines.

    Events carry a sequence number instead of a wall-clock time so that two
    identical runs write identical files.
    """

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.events: List[dict] = []

    def log(self, event_type: str, data: dict) -> dict:
        """
        Log an event.

        Args:
            event_type: Type of event (e.g., 'EPOCH', 'RMDT_MASKS', 'EVALUATION')
            data: Event data (JSON-serializable dictionary)
        """
        event = {"seq": len(self.events), "event_type": event_type}
        event.update(data)
        self.events.append(event)
        console.info("%s: %s", event_type, _summarize(data))
        return event

    def save(self, path: Optional[str] = None) -> Optional[str]:
        """Write all events to `path` (or the logger's path); returns the path written."""
        path = path or self.path
        if path is None:
            return None
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            for event in self.events:
                f.write(json.dumps(event, sort_keys=True) + "\n")
        os.replace(tmp, path)
        console.info("Saved %d events to %s", len(self.events), path)
        return path

    def load_events(self, path: Optional[str] = None) -> None:
        """Load events written by save()."""
        path = path or self.path
        with open(path, "r", encoding="utf-8") as f:
            self.events = [json.loads(line) for line in f if line.strip()]

    def get_events_by_type(self, event_type: str) -> List[dict]:
        return [event for event in self.events if event["event_type"] == event_type]

    def clear_events(self) -> None:
        self.events = []

    def to_frame(self, event_type: Optional[str] = None) -> pd.DataFrame:
        """Events (optionally of one type) as a DataFrame, one row per event."""
        rows = self.events if event_type is None else self.get_events_by_type(event_type)
        return pd.DataFrame(rows)

    def __len__(self) -> int:
        return len(self.events)


def _summarize(data: dict) -> str:
    parts = []
    for key, value in data.items():
        if isinstance(value, float):
            parts.append(f"{key}={value:.4f}")
        elif isinstance(value, (dict, list)):
            continue
        else:
            parts.append(f"{key}={value}")
    return " ".join(parts)


# Helper functions to make logging easier
def log_epoch(logger: EventLogger, stage: str, modality: str, epoch: int, split: str,
              loss: float, metrics: Dict[str, float], samples: int) -> dict:
    """Log one epoch's loss and classification metrics."""
    data = {"stage": stage, "modality": modality, "epoch": epoch, "split": split,
            "loss": float(loss), "samples": int(samples)}
    data.update({k: float(v) for k, v in metrics.items()})
    return logger.log("EPOCH", data)


def log_rmdt_masks(logger: EventLogger, epoch: int, counts: Dict[str, int]) -> dict:
    """Log how often each modality combination was used in a joint-training epoch."""
    return logger.log("RMDT_MASKS", {"epoch": epoch, "counts": dict(sorted(counts.items()))})


def log_skipped_samples(logger: EventLogger, stage: str, modality: str, skipped: int, reason: str) -> dict:
    return logger.log("SKIPPED_SAMPLES", {"stage": stage, "modality": modality,
                                          "skipped": int(skipped), "reason": reason})


def log_evaluation(logger: EventLogger, record: dict) -> dict:
    return logger.log("EVALUATION", record)


def log_checkpoint_saved(logger: EventLogger, path: str, stage: str) -> dict:
    return logger.log("CHECKPOINT_SAVED", {"path": path, "stage": stage})
