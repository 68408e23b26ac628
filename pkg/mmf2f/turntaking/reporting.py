# reporting.py

import json
import os
from typing import List, Optional, Sequence

import pandas as pd

from .evaluation import EvalReport

COLUMNS = ["Modalities", "Accuracy", "F1 Keep", "F1 Turn", "F1 BC", "Macro F1", "Samples"]


def reports_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """One row per modality combination in the Accuracy / per-class F1 layout."""
    rows = [{
        "Modalities": r.modalities.label,
        "Accuracy": r.accuracy,
        "F1 Keep": r.f1_keep,
        "F1 Turn": r.f1_turn,
        "F1 BC": r.f1_bc,
        "Macro F1": r.macro_f1,
        "Samples": r.samples,
    } for r in reports]
    frame = pd.DataFrame(rows, columns=COLUMNS)
    if len({r.checkpoint_id for r in reports}) > 1:
        frame.insert(1, "Checkpoint", [r.checkpoint_id for r in reports])
    return frame


def format_table(reports: Sequence[EvalReport], title: Optional[str] = None) -> str:
    """Aligned plain-text table, metrics to three decimals."""
    frame = reports_frame(reports)
    text = frame.to_string(index=False, float_format=lambda v: f"{v:.3f}")
    if title:
        text = f"{title}\n{text}"
    return text


def format_markdown(reports: Sequence[EvalReport], title: str = "Modality ablation") -> str:
    """Markdown version of the same table, with the checkpoint the rows came from."""
    lines: List[str] = [f"## {title}", ""]
    checkpoints = sorted({r.checkpoint_id for r in reports if r.checkpoint_id})
    if checkpoints:
        lines.append(f"**Checkpoint:** {', '.join(checkpoints)}")
        lines.append("")
    lines.append("| " + " | ".join(COLUMNS) + " |")
    lines.append("|" + "|".join("---" for _ in COLUMNS) + "|")
    for r in reports:
        lines.append(f"| {r.modalities.label} | {r.accuracy:.3f} | {r.f1_keep:.3f} | {r.f1_turn:.3f} "
                     f"| {r.f1_bc:.3f} | {r.macro_f1:.3f} | {r.samples:,} |")
    lines.append("")
    return "\n".join(lines)


def write_reports(path: str, reports: Sequence[EvalReport], table_path: Optional[str] = None) -> str:
    """
    Write one JSON record per report to `path` and the aligned table next to it.

    Args:
        path: JSON Lines destination
        reports: Evaluated combinations, in table order
        table_path: Text table destination; defaults to `path` with a .txt suffix

    Returns:
        The path of the text table
    """
    table_path = table_path or os.path.splitext(path)[0] + ".txt"
    if table_path == path:
        table_path = f"{path}.table.txt"
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        for r in reports:
            f.write(json.dumps(r.to_record(), sort_keys=True) + "\n")
    os.replace(tmp, path)
    with open(table_path, "w", encoding="utf-8") as f:
        f.write(format_table(reports) + "\n")
    return table_path


def read_reports(path: str) -> List[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
