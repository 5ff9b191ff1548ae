import csv
import json

import pytest

from planetseg.cli import load_config_file, main
from planetseg.report import read_metrics_csv, summarize


@pytest.fixture(scope="module")
def data_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    assert main(["datagen", "--patients", "6", "--seed", "11", "--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def checkpoints(tmp_path_factory, tiny_unet, tiny_segnext):
    d = tmp_path_factory.mktemp("ckpts")
    tiny_unet.save(d / "unet.pt")
    tiny_segnext.save(d / "segnext.pt")
    return d / "unet.pt", d / "segnext.pt"


def test_datagen_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["datagen", "--patients", "3", "--seed", "5", "--out", str(out)]) == 0
    ca = json.loads((a / "run_manifest.json").read_text())["checksums"]
    cb = json.loads((b / "run_manifest.json").read_text())["checksums"]
    assert ca == cb
    assert len(ca) == 3 * 5 * 2 + 1  # images, masks, manifest.csv


def test_datagen_rejects_single_patient(tmp_path, capsys):
    out = tmp_path / "bad"
    assert main(["datagen", "--patients", "1", "--out", str(out)]) != 0
    assert not out.exists()  # partial run directory removed


def test_preprocess(data_root, tmp_path):
    out = tmp_path / "prep"
    assert main(["preprocess", "--data", str(data_root), "--out", str(out)]) == 0
    geometry = json.loads((out / "geometry.json").read_text())
    assert len(geometry) == 30
    assert all("scale_applied" in g for g in geometry.values())


def test_train_writes_folds_and_definitive(data_root, tmp_path):
    out = tmp_path / "run"
    rc = main([
        "train", "--data", str(data_root), "--arch", "unet", "--seed", "1",
        "--epochs", "1", "--folds", "2", "--test-fraction", "0.34",
        "--unet-width", "8", "--val-tta-variants", "1", "--out", str(out),
    ])
    assert rc == 0
    summary = json.loads((out / "cv_summary.json").read_text())
    assert len(summary["fold_val_iou"]) == 2
    assert (out / summary["definitive_checkpoint"]).exists()
    assert (out / "config.json").exists()
    assert (out / "run_manifest.json").exists()


def test_train_missing_data_leaves_nothing(tmp_path):
    out = tmp_path / "ghost"
    rc = main(["train", "--data", str(tmp_path / "nope"), "--out", str(out)])
    assert rc != 0
    assert not out.exists()


def test_infer(data_root, checkpoints, tmp_path):
    unet, segnext = checkpoints
    out = tmp_path / "inf"
    rc = main([
        "infer", "--data", str(data_root), "--unet", str(unet),
        "--segnext", str(segnext), "--variants", "1", "--seed", "2",
        "--out", str(out),
    ])
    assert rc == 0
    masks = sorted((out / "predictions").glob("*_mask.png"))
    sidecars = sorted((out / "predictions").glob("*.json"))
    assert len(masks) == 30 and len(sidecars) == 30
    sidecar = json.loads(sidecars[0].read_text())
    assert set(sidecar["transforms"]) == {"unet", "segnext_s"}
    assert sidecar["n_variants"] == 1


def test_evaluate_outputs_and_determinism(data_root, checkpoints, tmp_path):
    unet, segnext = checkpoints
    outs = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        rc = main([
            "evaluate", "--data", str(data_root), "--unet", str(unet),
            "--segnext", str(segnext), "--variants", "2", "--seed", "3",
            "--test-fraction", "0.34", "--out", str(out),
        ])
        assert rc == 0
        outs.append(out)
    e1, e2 = outs
    assert (e1 / "metrics.csv").read_bytes() == (e2 / "metrics.csv").read_bytes()
    with open(e1 / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 2 * 5  # two systems, two test patients, five slices
    summary = json.loads((e1 / "summary.json").read_text())
    assert set(summary["systems"]) == {"planet_s", "unet_tta"}
    assert (e1 / "iou_boxplot.svg").exists()
    assert (e1 / "ccc_histogram.svg").exists()
    for m1 in sorted((e1 / "predictions").glob("*_mask.png")):
        m2 = e2 / "predictions" / m1.name
        assert m1.read_bytes() == m2.read_bytes()


def test_evaluate_checkpoint_mismatch(data_root, checkpoints, tmp_path):
    unet, segnext = checkpoints
    rc = main([
        "evaluate", "--data", str(data_root), "--unet", str(segnext),
        "--segnext", str(unet), "--out", str(tmp_path / "x"),
    ])
    assert rc != 0


def test_summary_matches_recomputation(data_root, checkpoints, tmp_path):
    unet, segnext = checkpoints
    out = tmp_path / "ev"
    assert main([
        "evaluate", "--data", str(data_root), "--unet", str(unet),
        "--segnext", str(segnext), "--variants", "1", "--seed", "4",
        "--test-fraction", "0.34", "--out", str(out),
    ]) == 0
    summary = json.loads((out / "summary.json").read_text())
    recomputed = summarize(read_metrics_csv(out / "metrics.csv"))
    for system, agg in summary["systems"].items():
        re_agg = recomputed["systems"][system]
        assert agg["ccc_match_count"] == re_agg["ccc_match_count"]
        assert abs(agg["mean_iou"] - re_agg["mean_iou"]) < 1e-9

    rep = tmp_path / "rep"
    assert main(["report", "--metrics", str(out / "metrics.csv"), "--out", str(rep)]) == 0
    assert (rep / "iou_boxplot.svg").exists()


def test_identical_systems_degenerate_stats(tmp_path):
    # hand-built metrics where both systems agree everywhere
    path = tmp_path / "metrics.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["system", "image_id", "iou", "cc_pred", "cc_gt", "cc_abs_diff"])
        for system in ("a", "b"):
            for i in range(4):
                writer.writerow([system, f"img{i}", "0.5", 1, 1, 0])
    out = tmp_path / "rep"
    assert main(["report", "--metrics", str(path), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["iou_paired_t"] == {"verdict": "identical"}
    assert summary["ccc_wilcoxon"] == {"verdict": "identical"}
    assert (out / "iou_boxplot.svg").exists()  # plots still emitted


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("patients = 4\nseed = 9  # comment\n")
    assert load_config_file(cfg) == {"patients": "4", "seed": "9"}
    out = tmp_path / "gen"
    assert main(["datagen", "--config", str(cfg), "--patients", "2", "--out", str(out)]) == 0
    # CLI flag beat the file: only 2 patients generated
    assert len([p for p in out.iterdir() if p.is_dir()]) == 2
