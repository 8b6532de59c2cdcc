"""Report files: deterministic tables, curve series, rendered figures."""

import json
import math

import numpy as np
import pytest

from fencepipe.errors import EmptyInputError
from fencepipe.metrics import class_report, confusion_matrix
from fencepipe.optim import LogRow, TrainingLog
from fencepipe.report import (
    SEG_COLUMNS,
    render_curve_figure,
    rows_from_log,
    write_class_report,
    write_report,
    write_seg_table,
)


def _log():
    return TrainingLog([
        LogRow(1, "train", 0.9, 0.4, 0.7, 0.5),
        LogRow(1, "val", 0.95, 0.35, 0.65, 0.45),
        LogRow(2, "train", 0.5, 0.6, 0.85, 0.7),
        LogRow(2, "val", 0.55, 0.55, 0.8, 0.66),
    ])


def _cls_log():
    return TrainingLog([
        LogRow(1, "train", 0.7, None, 0.5, None),
        LogRow(2, "train", 0.4, None, 0.9, None),
    ])


def test_rows_from_log_keeps_only_the_final_epoch():
    rows = rows_from_log(_log(), batch_size=8)
    assert [(r.split, r.loss) for r in rows] == [("train", 0.5), ("val", 0.55)]
    assert all(r.batch_size == 8 for r in rows)
    with pytest.raises(EmptyInputError):
        rows_from_log(TrainingLog([]), 8)


def test_rows_from_log_fills_nan_for_classifier_logs():
    rows = rows_from_log(_cls_log(), batch_size=4)
    assert len(rows) == 1
    assert math.isnan(rows[0].mean_iou) and math.isnan(rows[0].dice_coef)
    assert rows[0].accuracy == 0.9


def test_seg_table_layout_and_determinism(tmp_path):
    rows = rows_from_log(_log(), batch_size=16)
    a_csv, a_json = tmp_path / "a.csv", tmp_path / "a.json"
    b_csv, b_json = tmp_path / "b.csv", tmp_path / "b.json"
    write_seg_table(a_csv, a_json, rows)
    write_seg_table(b_csv, b_json, rows)
    assert a_csv.read_bytes() == b_csv.read_bytes()
    assert a_json.read_bytes() == b_json.read_bytes()

    lines = a_csv.read_text().splitlines()
    assert lines[0] == ",".join(SEG_COLUMNS)
    assert lines[1] == "train,16,0.5,0.6,0.85,0.7"
    payload = json.loads(a_json.read_text())
    assert [r["split"] for r in payload] == ["train", "val"]
    assert payload[1]["dice_coef"] == 0.66


def test_class_report_file_includes_confusion(tmp_path):
    cm = confusion_matrix(["double", "single", "single"],
                          ["double", "single", "double"], ("double", "single"))
    rep = class_report(cm)
    p = tmp_path / "cls.json"
    write_class_report(p, rep, cm)
    payload = json.loads(p.read_text())
    assert payload["classes"] == ["double", "single"]
    assert payload["confusion"] == [[1, 0], [1, 1]]
    assert payload["report"]["accuracy"] == round(2 / 3, 4)


def test_curve_figure_is_a_png(tmp_path):
    p = tmp_path / "curves.png"
    render_curve_figure(p, _log())
    data = p.read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    assert len(data) > 1000
    with pytest.raises(EmptyInputError):
        render_curve_figure(tmp_path / "no.png", TrainingLog([]))


def test_curve_figure_handles_metricless_panels(tmp_path):
    p = tmp_path / "cls.png"
    render_curve_figure(p, _cls_log())  # miou/dice panels have no data
    assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_write_report_emits_the_full_bundle(tmp_path):
    cm = confusion_matrix(["double", "single"], ["double", "single"],
                          ("double", "single"))
    files = write_report(tmp_path / "out", _log(), batch_size=8,
                         class_report=class_report(cm), cm=cm)
    names = [f.split("/")[-1] for f in files]
    assert names == ["report.csv", "report.json", "curves.csv", "curves.png",
                     "class_report.json"]
    for f in files:
        assert len(open(f, "rb").read()) > 0
    curves = (tmp_path / "out" / "curves.csv").read_text().splitlines()
    assert curves[0] == "epoch,split,loss,miou,accuracy,dice"
    assert len(curves) == 1 + 4


def test_write_report_text_outputs_are_byte_deterministic(tmp_path):
    write_report(tmp_path / "a", _log())
    write_report(tmp_path / "b", _log())
    for name in ("report.csv", "report.json", "curves.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
