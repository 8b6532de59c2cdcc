"""Report artifacts: metric tables, curve series, and rendered figures.

JSON and CSV outputs are deterministic byte for byte given the same
inputs (sorted keys, repr floats). The rendered PNGs are a convenience for
humans and are not covered by that guarantee.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .datapipe import atomic_write_bytes, atomic_write_text
from .errors import EmptyInputError
from .metrics import ClassReport, ConfusionMatrix
from .optim import TrainingLog

SEG_COLUMNS = ("split", "batch_size", "loss", "mean_iou", "accuracy", "dice_coef")


@dataclass
class SegRunRow:
    """One line of the segmentation results table."""

    split: str
    batch_size: int
    loss: float
    mean_iou: float
    accuracy: float
    dice_coef: float

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "batch_size": self.batch_size,
            "loss": self.loss,
            "mean_iou": self.mean_iou,
            "accuracy": self.accuracy,
            "dice_coef": self.dice_coef,
        }


def rows_from_log(log: TrainingLog, batch_size: int) -> list[SegRunRow]:
    """Final-epoch metrics per split, in the order the splits appear."""
    if not log.rows:
        raise EmptyInputError("rows_from_log: empty training log")
    last_epoch = max(r.epoch for r in log.rows)
    out = []
    for r in log.rows:
        if r.epoch != last_epoch:
            continue
        out.append(SegRunRow(
            r.split, batch_size, r.loss,
            r.miou if r.miou is not None else float("nan"),
            r.accuracy,
            r.dice if r.dice is not None else float("nan"),
        ))
    return out


def write_seg_table(path_csv, path_json, rows: list[SegRunRow]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(SEG_COLUMNS)
    for r in rows:
        w.writerow([r.split, r.batch_size, repr(float(r.loss)), repr(float(r.mean_iou)),
                    repr(float(r.accuracy)), repr(float(r.dice_coef))])
    atomic_write_text(path_csv, buf.getvalue())
    atomic_write_text(
        path_json, json.dumps([r.to_dict() for r in rows], sort_keys=True, indent=2) + "\n"
    )


def write_class_report(path, report: ClassReport, cm: ConfusionMatrix | None = None) -> None:
    payload: dict = {"report": report.to_dict()}
    if cm is not None:
        payload["classes"] = list(cm.classes)
        payload["confusion"] = [[int(v) for v in row] for row in cm.counts]
    atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_curves_csv(path, log: TrainingLog) -> None:
    """Per-epoch metric series in the training-log schema, for external plotting."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(("epoch", "split", "loss", "miou", "accuracy", "dice"))
    for r in log.rows:
        w.writerow([
            r.epoch, r.split, repr(float(r.loss)),
            "" if r.miou is None else repr(float(r.miou)),
            repr(float(r.accuracy)),
            "" if r.dice is None else repr(float(r.dice)),
        ])
    atomic_write_text(path, buf.getvalue())


def render_curve_figure(path, log: TrainingLog, title: str = "training curves") -> None:
    """2x2 grid of loss / MIoU / accuracy / Dice against epoch, one line per split."""
    if not log.rows:
        raise EmptyInputError("render_curve_figure: empty training log")
    splits = []
    for r in log.rows:
        if r.split not in splits:
            splits.append(r.split)
    panels = (
        ("loss", lambda r: r.loss),
        ("mean IoU", lambda r: r.miou),
        ("pixel accuracy", lambda r: r.accuracy),
        ("dice", lambda r: r.dice),
    )
    fig, axes = plt.subplots(2, 2, figsize=(9, 6.5))
    for ax, (label, get) in zip(axes.ravel(), panels):
        drew = False
        for split in splits:
            pts = [(r.epoch, get(r)) for r in log.rows if r.split == split and get(r) is not None]
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts], label=split)
                drew = True
        ax.set_xlabel("epoch")
        ax.set_ylabel(label)
        if drew:
            ax.legend(fontsize=8)
        else:
            ax.text(0.5, 0.5, "n/a", ha="center", va="center", transform=ax.transAxes)
    fig.suptitle(title)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def write_report(out_dir, log: TrainingLog, batch_size: int = 8,
                 class_report: ClassReport | None = None,
                 cm: ConfusionMatrix | None = None,
                 title: str = "training curves") -> list[str]:
    """Emit the full report bundle into out_dir; returns the files written."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    rows = rows_from_log(log, batch_size)
    p_csv = os.path.join(out_dir, "report.csv")
    p_json = os.path.join(out_dir, "report.json")
    write_seg_table(p_csv, p_json, rows)
    files += [p_csv, p_json]
    p_curves = os.path.join(out_dir, "curves.csv")
    write_curves_csv(p_curves, log)
    files.append(p_curves)
    p_fig = os.path.join(out_dir, "curves.png")
    render_curve_figure(p_fig, log, title)
    files.append(p_fig)
    if class_report is not None:
        p_cls = os.path.join(out_dir, "class_report.json")
        write_class_report(p_cls, class_report, cm)
        files.append(p_cls)
    return files
