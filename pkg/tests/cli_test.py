#!/usr/bin/env python3
"""
End-to-end tests of the command-line surface, run in-process through main().

Run: python -m pytest tests/cli_test.py -v
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from main import main
from schemas.boxes import BBox, BoxRecord, FrameRecord
from synth.sequence_io import read_annotations, read_records, write_records, write_sequence

SMALL = str(Path(__file__).parent.parent / "configs" / "small.json")


@pytest.fixture
def sequences(tmp_path):
    root = tmp_path / "data"
    assert main(["synth", "--config", SMALL, "--out", str(root), "--windows", "2", "--seed", "3"]) == 0
    return root


def forward(root: Path, out: Path, *extra: str) -> list:
    argv = ["forward", "--config", SMALL, "--weights", "random:42", "--seq", str(root), "--out", str(out), *extra]
    assert main(argv) == 0
    return read_records(out)


# ============ SYNTH ============

def test_synth_writes_sequences(sequences):
    assert sorted(p.name for p in sequences.iterdir()) == ["seq_0", "seq_1"]
    assert len(list((sequences / "seq_0").glob("frame_*.pgm"))) == 5
    assert (sequences / "seq_0" / "annotations.jsonl").exists()


def test_synth_zero_sequences(tmp_path, capsys):
    assert main(["synth", "--config", SMALL, "--out", str(tmp_path / "none"), "--windows", "0"]) == 0
    assert list((tmp_path / "none").iterdir()) == []
    assert "wrote 0 sequences" in capsys.readouterr().out


def test_synth_is_byte_deterministic(tmp_path):
    for name in ("a", "b"):
        main(["synth", "--config", SMALL, "--out", str(tmp_path / name), "--windows", "3", "--seed", "9"])
    for path in sorted((tmp_path / "a").rglob("*")):
        if path.is_file():
            assert path.read_bytes() == (tmp_path / "b" / path.relative_to(tmp_path / "a")).read_bytes()


# ============ FORWARD ============

def test_forward_is_deterministic(sequences, tmp_path):
    forward(sequences, tmp_path / "a.jsonl")
    forward(sequences, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_forward_boxes_stay_in_frame(sequences, tmp_path):
    records = forward(sequences, tmp_path / "det.jsonl")
    assert [(r.sequence, r.frame_id) for r in records] == [("seq_0", 4), ("seq_1", 4)]
    for rec in records:
        # 32x32 frames at stride 4 leave an 8x8 grid of candidates
        assert len(rec.boxes) <= 64
        for b in rec.boxes:
            assert 0 <= b.cx - b.w / 2 - 1e-6 and b.cx + b.w / 2 <= 32 + 1e-6
            assert 0 <= b.cy - b.h / 2 - 1e-6 and b.cy + b.h / 2 <= 32 + 1e-6
            assert 0.001 < b.score <= 1.0


def test_saved_weights_match_random_source(sequences, tmp_path):
    weights = tmp_path / "w.trdw"
    assert main(["weights", "--config", SMALL, "--seed", "42", "--out", str(weights)]) == 0
    forward(sequences, tmp_path / "random.jsonl")
    argv = ["forward", "--config", SMALL, "--weights", str(weights), "--seq", str(sequences),
            "--out", str(tmp_path / "file.jsonl")]
    assert main(argv) == 0
    assert (tmp_path / "random.jsonl").read_bytes() == (tmp_path / "file.jsonl").read_bytes()


def test_forward_ablation_flags(sequences, tmp_path):
    full = forward(sequences, tmp_path / "full.jsonl")
    ablated = forward(sequences, tmp_path / "ablated.jsonl", "--no-lgfm", "--no-tdem")
    assert len(ablated) == len(full)
    assert tmp_path.joinpath("full.jsonl").read_bytes() != tmp_path.joinpath("ablated.jsonl").read_bytes()


def test_forward_missing_sequence_directory(tmp_path, capsys):
    argv = ["forward", "--config", SMALL, "--weights", "random:0", "--seq", str(tmp_path / "absent"),
            "--out", str(tmp_path / "det.jsonl")]
    assert main(argv) == 2
    assert "error:" in capsys.readouterr().err


def test_forward_missing_weights_file(sequences, tmp_path):
    argv = ["forward", "--config", SMALL, "--weights", str(tmp_path / "absent.trdw"), "--seq", str(sequences),
            "--out", str(tmp_path / "det.jsonl")]
    assert main(argv) == 2


# ============ EVAL ============

def keyframe_truth(root: Path) -> list:
    records = []
    for seq in sorted(p.name for p in root.iterdir()):
        boxes = read_annotations(root / seq)[4]
        records.append(FrameRecord(frame_id=4, sequence=seq, boxes=[BoxRecord.from_box(b) for b in boxes]))
    return records


def test_eval_perfect_detections(sequences, tmp_path, capsys):
    det = tmp_path / "det.jsonl"
    write_records(det, keyframe_truth(sequences))
    pr = tmp_path / "pr.csv"
    assert main(["eval", "--config", SMALL, "--det", str(det), "--gt", str(sequences), "--pr", str(pr)]) == 0
    out = capsys.readouterr().out
    assert "Precision: 100.00%" in out and "Recall:    100.00%" in out and "mAP50:     100.00%" in out
    assert pr.read_text().startswith("recall,precision\n")


def test_eval_empty_detections(sequences, tmp_path, capsys):
    det = tmp_path / "det.jsonl"
    write_records(det, [])
    assert main(["eval", "--config", SMALL, "--det", str(det), "--gt", str(sequences)]) == 0
    assert "Recall:    0.00%" in capsys.readouterr().out


def test_eval_maps_anonymous_detections_onto_a_single_sequence(sequences, tmp_path, capsys):
    truth = keyframe_truth(sequences)[0]
    det = tmp_path / "det.jsonl"
    write_records(det, [truth.model_copy(update={"sequence": ""})])
    assert main(["eval", "--config", SMALL, "--det", str(det), "--gt", str(sequences / "seq_0")]) == 0
    assert "Precision: 100.00%" in capsys.readouterr().out


def test_eval_counts_a_false_positive(tmp_path, capsys):
    gt_dir = tmp_path / "gt" / "seq_0"
    truth = [BBox(cx=4, cy=4, w=4, h=4), BBox(cx=12, cy=12, w=4, h=4)]
    write_sequence(gt_dir, np.zeros((5, 16, 16)), [[], [], [], [], truth])
    preds = [
        truth[0].model_copy(update={"score": 0.9}),
        BBox(cx=12, cy=3, w=2, h=2, score=0.8),
        truth[1].model_copy(update={"score": 0.7}),
    ]
    det = tmp_path / "det.jsonl"
    write_records(det, [FrameRecord(frame_id=4, sequence="seq_0", boxes=[BoxRecord.from_box(b) for b in preds])])
    assert main(["eval", "--config", SMALL, "--det", str(det), "--gt", str(tmp_path / "gt")]) == 0
    out = capsys.readouterr().out
    assert "Precision: 66.67%" in out
    assert "Recall:    100.00%" in out
    assert "F1:        80.00%" in out
    assert "mAP50:     83.33%" in out


def test_eval_rejects_bad_iou(sequences, tmp_path):
    det = tmp_path / "det.jsonl"
    write_records(det, [])
    assert main(["eval", "--det", str(det), "--gt", str(sequences), "--iou", "1.5"]) == 1


def test_eval_missing_detection_file(sequences, tmp_path):
    assert main(["eval", "--config", SMALL, "--det", str(tmp_path / "absent.jsonl"), "--gt", str(sequences)]) == 2


# ============ GRADCHECK / FITBOX / BENCH ============

def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--cases", "20", "--seed", "1"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_fitbox_from_coincident_init(capsys):
    assert main(["fitbox", "--init", "10,10,4,4", "--target", "10,10,4,4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2
    assert lines[-1].startswith("steps: 0, final loss: 0")


def test_fitbox_prints_a_trajectory(capsys):
    assert main(["fitbox", "--init", "12,11,4,4", "--target", "10,10,4,4", "--steps", "50"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split()[0] == "0"
    assert lines[-1].startswith("steps: ")


def test_bench_fft(capsys):
    assert main(["bench", "--op", "fft", "--size", "16", "--repeat", "2"]) == 0
    assert "ns/op" in capsys.readouterr().out


def test_params_lists_modules(capsys):
    assert main(["params", "--config", SMALL]) == 0
    out = capsys.readouterr().out
    assert "total" in out and "backbone" in out


# ============ ERRORS ============

@pytest.mark.parametrize("argv", [
    [],
    ["synth"],
    ["fitbox", "--init", "1,2,3", "--target", "1,1,1,1"],
    ["bench", "--op", "sort"],
    ["gradcheck", "--cases", "0"],
    ["synth", "--out", "x", "--windows", "-1"],
])
def test_bad_arguments_exit_one(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_unknown_log_level(monkeypatch):
    monkeypatch.setenv("TRIDOS_LOG_LEVEL", "chatty")
    assert main(["gradcheck", "--cases", "1"]) == 1
