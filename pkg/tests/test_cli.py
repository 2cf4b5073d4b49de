from __future__ import annotations

import json
import shutil

import numpy as np
import pytest

from propeval.cli import main
from propeval.data_io import load_proposals
from propeval.imaging import decode_image
from propeval.report import read_csv


def run(*args) -> int:
    return main([str(a) for a in args])


@pytest.fixture
def one_image(tmp_path, mini_dir):
    d = tmp_path / "imgs"
    d.mkdir()
    shutil.copy(mini_dir / "images" / "img00.png", d)
    return d


class TestPerturb:
    def test_rotation_tree(self, tmp_path, one_image):
        out = tmp_path / "out"
        assert run("perturb", "--images", one_image, "--kinds", "rotation", "--out", out) == 0
        files = sorted(out.glob("rotation/*/img00.png"))
        assert len(files) == 9
        lines = (out / "metadata.jsonl").read_text().splitlines()
        assert len(lines) == 9
        rec = json.loads(lines[0])
        assert rec["kind"] == "rotation" and rec["crop"] is not None

    def test_none_is_copy(self, tmp_path, one_image):
        out = tmp_path / "out"
        assert run("perturb", "--images", one_image, "--kinds", "none", "--out", out) == 0
        copy = decode_image(out / "none" / "none" / "img00.png")
        np.testing.assert_array_equal(copy, decode_image(one_image / "img00.png"))

    def test_unreadable_image(self, tmp_path, one_image, capsys):
        (one_image / "broken.png").write_bytes(b"not a png")
        code = run("perturb", "--images", one_image, "--kinds", "none", "--out", tmp_path / "out")
        err = capsys.readouterr().err
        assert code != 0
        assert "broken.png" in err and "broken" in err.splitlines()[-1]
        assert (tmp_path / "out" / "none" / "none" / "img00.png").exists()

    def test_missing_directory(self, tmp_path, capsys):
        assert run("perturb", "--images", tmp_path / "nope", "--out", tmp_path / "o") == 2
        assert "nope" in capsys.readouterr().err


class TestBaseline:
    def test_sliding_window(self, tmp_path, mini_dir):
        out = tmp_path / "sw.jsonl"
        assert run("baseline", "--method", "sliding_window", "--gt", mini_dir / "gt.jsonl", "--n", 1000, "--out", out) == 0
        ps = load_proposals(out)
        assert len(ps) == 10 and all(len(p) <= 1000 for p in ps.images.values())

    def test_gaussian_needs_train_gt(self, tmp_path, mini_dir, capsys):
        code = run("baseline", "--method", "gaussian", "--gt", mini_dir / "gt.jsonl", "--seed", 1, "--out", tmp_path / "g.jsonl")
        assert code == 2 and "--train-gt" in capsys.readouterr().err

    def test_gaussian_needs_seed(self, tmp_path, mini_dir):
        gt = mini_dir / "gt.jsonl"
        assert run("baseline", "--method", "uniform", "--gt", gt, "--train-gt", gt, "--out", tmp_path / "u.jsonl") == 2

    def test_seeded_runs_identical(self, tmp_path, mini_dir):
        gt = mini_dir / "gt.jsonl"
        for name in ("a", "b"):
            args = ["baseline", "--method", "gaussian", "--gt", gt, "--train-gt", gt, "--seed", 7, "--n", 50]
            assert run(*args, "--out", tmp_path / f"{name}.jsonl") == 0
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_saved_stats_reused(self, tmp_path, mini_dir):
        gt = mini_dir / "gt.jsonl"
        common = ["baseline", "--method", "uniform", "--gt", gt, "--seed", 3, "--n", 20]
        assert run(*common, "--train-gt", gt, "--save-stats", tmp_path / "s.json", "--out", tmp_path / "a.jsonl") == 0
        assert run(*common, "--train-gt", tmp_path / "s.json", "--out", tmp_path / "b.jsonl") == 0
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_superpixels_from_images(self, tmp_path, one_image):
        out = tmp_path / "sp.jsonl"
        assert run("baseline", "--method", "superpixels", "--images", one_image, "--out", out) == 0
        assert len(load_proposals(out).images["img00"]) > 1


class TestEvalRecall:
    def test_gt_as_proposals(self, tmp_path, mini_dir):
        out = tmp_path / "rec"
        gt = mini_dir / "gt.jsonl"
        assert run("eval-recall", "--gt", gt, "--proposals", gt, "--n", "10", "--out", out) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["methods"][0]["counts"]["10"]["auc"] == 1.0
        meta, rows = read_csv(out / "recall_vs_iou.csv")
        assert "21 points" in meta["thresholds"]
        assert len(rows) == 21

    def test_config_file_and_flag_override(self, tmp_path, mini_dir):
        cfg = tmp_path / "run.toml"
        cfg.write_text(
            f'gt = "{mini_dir / "gt.jsonl"}"\n[eval-recall]\nproposals = "{mini_dir / "proposals.jsonl"}"\nn = "5,50"\n'
        )
        out = tmp_path / "rec"
        assert run("eval-recall", "--config", cfg, "--n", "7", "--out", out) == 0
        _, rows = read_csv(out / "recall_50_vs_n.csv")
        assert [r["n"] for r in rows] == ["7"]

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text("bogus = 1\n")
        assert run("eval-recall", "--config", cfg) == 2


class TestEvalRepeatability:
    def test_internal_identity_row(self, tmp_path, mini_dir):
        out = tmp_path / "rep"
        code = run(
            "eval-repeatability", "--images", mini_dir / "images", "--method", "sliding_window",
            "--kinds", "none,blur", "--n", 100, "--out", out,
        )
        assert code == 0
        _, rows = read_csv(out / "repeatability_auc.csv")
        assert rows[0]["spec_kind"] == "none" and float(rows[0]["value"]) == 1.0
        assert all(float(r["value"]) == 1.0 for r in rows)

    def test_external_mode(self, tmp_path, one_image):
        pert = tmp_path / "pert"
        assert run("perturb", "--images", one_image, "--kinds", "none,scale", "--out", pert) == 0
        for d in [p for p in pert.glob("*/*") if p.is_dir()]:
            assert run("baseline", "--method", "sliding_window", "--images", d, "--n", 100, "--out", d / "proposals.jsonl") == 0
        ref = tmp_path / "ref.jsonl"
        assert run("baseline", "--method", "sliding_window", "--images", one_image, "--n", 100, "--out", ref) == 0
        out = tmp_path / "rep"
        assert run("eval-repeatability", "--reference", ref, "--perturbed-root", pert, "--kinds", "none,scale", "--out", out) == 0
        _, rows = read_csv(out / "repeatability_auc.csv")
        by = {(r["spec_kind"], r["spec_param"]): float(r["value"]) for r in rows}
        assert by[("none", "")] == 1.0 and by[("scale", "1")] == 1.0
        assert by[("scale", "0.5")] < 1.0

    def test_external_missing_tree(self, tmp_path, mini_dir):
        code = run(
            "eval-repeatability", "--reference", mini_dir / "proposals.jsonl",
            "--perturbed-root", tmp_path, "--kinds", "none", "--out", tmp_path / "o",
        )
        assert code == 2

    def test_needs_method(self, tmp_path, mini_dir):
        assert run("eval-repeatability", "--images", mini_dir / "images", "--out", tmp_path / "o") == 2


DET_GT = [
    {"image_id": "i1", "width": 100, "height": 100, "boxes": [[0, 0, 10, 10]], "labels": ["cat"]},
    {"image_id": "i2", "width": 100, "height": 100, "boxes": [[0, 0, 10, 10], [20, 20, 40, 40]], "labels": ["cat", "dog"]},
    {"image_id": "i3", "width": 100, "height": 100, "boxes": [[0, 0, 20, 20]], "labels": ["dog"]},
]
DET = [
    {"image_id": "i1", "detections": [[0, 0, 10, 10, 0.9, "cat"], [20, 20, 30, 30, 0.8, "cat"]]},
    {"image_id": "i2", "detections": [[20, 20, 40, 40, 0.7, "dog"], [50, 50, 60, 60, 0.95, "cat"]]},
    {"image_id": "i3", "detections": [[30, 30, 40, 40, 0.6, "dog"]]},
]


class TestEvalDetection:
    def write(self, tmp_path):
        gt = tmp_path / "gt.jsonl"
        gt.write_text("".join(json.dumps(r) + "\n" for r in DET_GT))
        det = tmp_path / "det.jsonl"
        det.write_text("".join(json.dumps(r) + "\n" for r in DET))
        return gt, det

    def test_hand_computed_map(self, tmp_path):
        gt, det = self.write(tmp_path)
        out = tmp_path / "o"
        assert run("eval-detection", "--gt", gt, "--detections", det, "--out", out) == 0
        summary = json.loads((out / "summary.json").read_text())
        # cat: FP, TP, FP over 2 positives -> 3/11; dog: TP, FP over 2 -> 6/11
        assert summary["ap"]["cat"] == pytest.approx(3 / 11, abs=1e-15)
        assert summary["ap"]["dog"] == pytest.approx(6 / 11, abs=1e-15)
        assert summary["mAP"] == pytest.approx(9 / 22, abs=1e-15)
        _, rows = read_csv(out / "ap.csv")
        assert rows[-1]["class"] == "mAP"

    def test_proposal_filter(self, tmp_path):
        gt, det = self.write(tmp_path)
        props = tmp_path / "p.jsonl"
        props.write_text(
            json.dumps({"image_id": "i1", "boxes": [[0, 0, 10, 10]]}) + "\n"
            + json.dumps({"image_id": "i2", "boxes": [[20, 20, 40, 40]]}) + "\n"
        )
        out = tmp_path / "o"
        assert run("eval-detection", "--gt", gt, "--detections", det, "--proposals", props, "--out", out) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["detections"] == {"raw": 5, "filtered": 2, "after_nms": 2}
        assert summary["mAP"] == pytest.approx((6 / 11 + 6 / 11) / 2)


class TestReport:
    def test_svg_written(self, tmp_path, mini_dir, capsys):
        out = tmp_path / "rec"
        assert run("eval-recall", "--gt", mini_dir / "gt.jsonl", "--proposals", mini_dir / "proposals.jsonl", "--out", out) == 0
        assert run("report", out, "--logx") == 0
        svg = (out / "recall_50_vs_n.svg").read_text()
        assert svg.startswith("<svg") and "polyline" in svg
        assert "recall_vs_iou.svg" in capsys.readouterr().out
