"""Command-line entry points: datagen, preprocess, train, infer,
evaluate, report.

Every invocation writes a run manifest (resolved config, seed, paths,
duration, sha256 of every produced file). Config precedence is CLI flags
> config file (flat key=value lines) > built-in defaults. A failed run
deletes the partial output directory it created.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shutil
import sys
import time
from pathlib import Path

import cv2
import numpy as np

from . import dataio, report
from .geometry import AffineRangeConfig
from .inference import TTAConfig, predict_dataset, threshold_mask, tta_predict
from .models import SegNeXtConfig, load_checkpoint
from .objectives import metrics_record
from .training import TrainConfig, cross_validate, group_by_patient

SMALL_SEGNEXT = SegNeXtConfig(
    depths=(1, 1, 2, 1), widths=(32, 64, 128, 256), decoder_width=64
)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out_dir: Path, command: str, config: dict, start: float) -> None:
    manifest_path = out_dir / "run_manifest.json"
    checksums = {
        str(p.relative_to(out_dir)): _sha256(p)
        for p in sorted(out_dir.rglob("*"))
        if p.is_file() and p != manifest_path
    }
    manifest = {
        "command": command,
        "config": config,
        "output_dir": str(out_dir),
        "duration_s": round(time.time() - start, 3),
        "checksums": checksums,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_config_file(path) -> dict:
    """Flat key=value file; '#' starts a comment."""
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = val
    return values


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """CLI flags beat config-file values beat defaults."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        file_vals = load_config_file(args.config)
        for key, val in file_vals.items():
            if key in resolved and resolved[key] is not None:
                val = type(defaults[key])(val) if defaults[key] is not None else val
            resolved[key] = val
    for key in defaults:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            resolved[key] = cli_val
    return resolved


def _parse_range(text) -> tuple[float, float]:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    lo, hi = text.split(",")
    return (float(lo), float(hi))


def _ranges_from(resolved: dict) -> AffineRangeConfig:
    return AffineRangeConfig(
        rotation_deg=_parse_range(resolved["rot_range"]),
        shift=_parse_range(resolved["shift_range"]),
        scale=_parse_range(resolved["scale_range"]),
    )


AUG_DEFAULTS = {
    "rot_range": "-45,45",
    "shift_range": "0,0.1",
    "scale_range": "0.8,1.0",
}


def _prepare_out(path) -> tuple[Path, bool]:
    out = Path(path)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    return out, created


def _write_prediction(pred_dir: Path, image_id: str, pred, config: TTAConfig) -> None:
    pred_dir.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(pred_dir / f"{image_id}_mask.png"), pred.final_mask * 255)
    sidecar = {
        "seed": config.seed,
        "threshold": config.threshold,
        "n_variants": config.n_variants,
        "transforms": {a: [p.to_dict() for p in ps] for a, ps in pred.transform_log.items()},
        "member_mask_areas": {a: int(m.sum()) for a, m in pred.member_masks.items()},
    }
    for arch, prob in pred.prob_maps.items():
        prob16 = np.round(np.clip(prob, 0, 1) * 65535).astype(np.uint16)
        cv2.imwrite(str(pred_dir / f"{image_id}_prob_{arch}.png"), prob16)
    (pred_dir / f"{image_id}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def cmd_datagen(args) -> int:
    defaults = {"patients": 40, "seed": 7, "out": None}
    resolved = _resolve(args, defaults)
    out, created = _prepare_out(resolved["out"])
    start = time.time()
    try:
        dataio.generate_synthetic(int(resolved["patients"]), int(resolved["seed"]), out)
        write_run_manifest(out, "datagen", {k: str(v) for k, v in resolved.items()}, start)
    except Exception as exc:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        print(f"datagen failed: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_preprocess(args) -> int:
    defaults = {"data": None, "out": None}
    resolved = _resolve(args, defaults)
    start = time.time()
    try:
        samples = dataio.load_dataset(resolved["data"])
    except Exception as exc:
        print(f"preprocess failed: {exc}", file=sys.stderr)
        return 1
    out, created = _prepare_out(resolved["out"])
    try:
        geometry = {}
        for s in samples:
            canvas = dataio.standardize(s)
            pdir = out / s.patient_id
            pdir.mkdir(exist_ok=True)
            img_u8 = np.round(canvas.image * 255).astype(np.uint8)
            cv2.imwrite(str(pdir / f"slice{s.slice_index}.png"), img_u8)
            cv2.imwrite(str(pdir / f"slice{s.slice_index}_mask.png"), canvas.mask * 255)
            geometry[s.image_id] = canvas.geometry_dict()
        (out / "geometry.json").write_text(json.dumps(geometry, indent=2, sort_keys=True))
        write_run_manifest(out, "preprocess", {k: str(v) for k, v in resolved.items()}, start)
    except Exception as exc:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        print(f"preprocess failed: {exc}", file=sys.stderr)
        return 1
    return 0


def _train_config(resolved: dict) -> TrainConfig:
    model_kwargs = {}
    if resolved["arch"] == "unet":
        model_kwargs["base_width"] = int(resolved["unet_width"])
    elif resolved["model_scale"] == "small":
        model_kwargs["config"] = SMALL_SEGNEXT
    return TrainConfig(
        arch=resolved["arch"],
        epochs=int(resolved["epochs"]),
        batch_size=int(resolved["batch_size"]),
        learning_rate=float(resolved["lr"]),
        augment=_ranges_from(resolved),
        seed=int(resolved["seed"]),
        patience=int(resolved["patience"]),
        val_tta_variants=int(resolved["val_tta_variants"]),
        model_kwargs=model_kwargs,
    )


def cmd_train(args) -> int:
    defaults = {
        "data": None,
        "arch": "unet",
        "seed": 0,
        "epochs": 100,
        "batch_size": 8,
        "lr": 1e-4,
        "patience": 15,
        "val_tta_variants": 4,
        "folds": 5,
        "test_fraction": 0.2,
        "unet_width": 64,
        "model_scale": "full",
        "out": None,
        **AUG_DEFAULTS,
    }
    resolved = _resolve(args, defaults)
    start = time.time()
    try:
        samples = dataio.load_dataset(resolved["data"])
        split = dataio.split_by_patient(
            samples, float(resolved["test_fraction"]), int(resolved["seed"])
        )
        train_samples = dataio.prepare_samples(
            dataio.select_samples(samples, split.train_patients)
        )
        config = _train_config(resolved)
    except Exception as exc:
        print(f"train failed: {exc}", file=sys.stderr)
        return 1
    out, created = _prepare_out(resolved["out"])
    try:
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
        definitive = cross_validate(
            config, group_by_patient(train_samples), k=int(resolved["folds"]), out_dir=out
        )
        write_run_manifest(out, "train", config.to_dict(), start)
        print(f"definitive checkpoint: {out}/fold{definitive.fold_index}/checkpoint.pt")
    except Exception as exc:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        print(f"train failed: {exc}", file=sys.stderr)
        return 1
    return 0


TTA_DEFAULTS = {
    "variants": 100,
    "threshold": 0.5,
    "seed": 0,
    **AUG_DEFAULTS,
}


def _tta_config(resolved: dict) -> TTAConfig:
    return TTAConfig(
        n_variants=int(resolved["variants"]),
        ranges=_ranges_from(resolved),
        threshold=float(resolved["threshold"]),
        seed=int(resolved["seed"]),
    )


def cmd_infer(args) -> int:
    defaults = {"data": None, "unet": None, "segnext": None, "out": None, **TTA_DEFAULTS}
    resolved = _resolve(args, defaults)
    start = time.time()
    try:
        unet = load_checkpoint(resolved["unet"])
        segnext = load_checkpoint(resolved["segnext"])
        if unet.arch != "unet" or segnext.arch != "segnext_s":
            raise ValueError(
                f"checkpoint/architecture mismatch: got {unet.arch} and {segnext.arch}"
            )
        samples = dataio.prepare_samples(dataio.load_dataset(resolved["data"]))
        config = _tta_config(resolved)
    except Exception as exc:
        print(f"infer failed: {exc}", file=sys.stderr)
        return 1
    out, created = _prepare_out(resolved["out"])
    try:
        for image_id, pred in predict_dataset(unet, segnext, samples, config):
            _write_prediction(out / "predictions", image_id, pred, config)
        write_run_manifest(out, "infer", {k: str(v) for k, v in resolved.items()}, start)
    except Exception as exc:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        print(f"infer failed: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_evaluate(args) -> int:
    """Evaluate the two-model ensemble against single-model TTA U-Net on
    the held-out patient split: per-image metrics, paired statistics,
    box plot and component-count histogram."""
    defaults = {
        "data": None,
        "unet": None,
        "segnext": None,
        "test_fraction": 0.2,
        "out": None,
        **TTA_DEFAULTS,
    }
    resolved = _resolve(args, defaults)
    start = time.time()
    try:
        unet = load_checkpoint(resolved["unet"])
        segnext = load_checkpoint(resolved["segnext"])
        if unet.arch != "unet" or segnext.arch != "segnext_s":
            raise ValueError(
                f"checkpoint/architecture mismatch: got {unet.arch} and {segnext.arch}"
            )
        samples = dataio.load_dataset(resolved["data"])
        split = dataio.split_by_patient(
            samples, float(resolved["test_fraction"]), int(resolved["seed"])
        )
        test = dataio.prepare_samples(dataio.select_samples(samples, split.test_patients))
        config = _tta_config(resolved)
    except Exception as exc:
        print(f"evaluate failed: {exc}", file=sys.stderr)
        return 1
    out, created = _prepare_out(resolved["out"])
    try:
        records = {"planet_s": [], "unet_tta": []}
        from dataclasses import replace

        from .inference import derive_seed

        for s, (image_id, pred) in zip(
            test, predict_dataset(unet, segnext, test, config)
        ):
            _write_prediction(out / "predictions", image_id, pred, config)
            records["planet_s"].append(
                metrics_record(image_id, pred.final_mask, s.canvas.mask)
            )
            solo_cfg = replace(config, seed=derive_seed(config.seed, image_id))
            solo = threshold_mask(
                tta_predict(unet, s.canvas.image, solo_cfg), config.threshold
            )
            cv2.imwrite(
                str(out / "predictions" / f"{image_id}_mask_unet_tta.png"), solo * 255
            )
            records["unet_tta"].append(metrics_record(image_id, solo, s.canvas.mask))

        report.write_metrics_csv(records, out / "metrics.csv")
        summary = report.summarize(records)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
        report.plot_iou_boxplot(records, out / "iou_boxplot.svg")
        report.plot_ccc_histogram(records, out / "ccc_histogram.svg")
        write_run_manifest(out, "evaluate", {k: str(v) for k, v in resolved.items()}, start)
    except Exception as exc:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        print(f"evaluate failed: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    defaults = {"metrics": None, "out": None}
    resolved = _resolve(args, defaults)
    start = time.time()
    try:
        records = report.read_metrics_csv(resolved["metrics"])
    except Exception as exc:
        print(f"report failed: {exc}", file=sys.stderr)
        return 1
    out, created = _prepare_out(resolved["out"])
    try:
        summary = report.summarize(records)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
        report.plot_iou_boxplot(records, out / "iou_boxplot.svg")
        report.plot_ccc_histogram(records, out / "ccc_histogram.svg")
        write_run_manifest(out, "report", {k: str(v) for k, v in resolved.items()}, start)
    except Exception as exc:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        print(f"report failed: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="planetseg")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, flags):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value config file")
        for flag, kwargs in flags.items():
            p.add_argument(flag, **kwargs)
        p.set_defaults(func=func)
        return p

    aug_flags = {
        "--rot-range": dict(default=None, help="rotation degrees, e.g. -45,45"),
        "--shift-range": dict(default=None, help="shift fraction magnitude, e.g. 0,0.1"),
        "--scale-range": dict(default=None, help="scale interval, e.g. 0.8,1.0"),
    }
    tta_flags = {
        "--variants": dict(type=int, default=None, help="TTA variants per model"),
        "--threshold": dict(type=float, default=None),
        "--seed": dict(type=int, default=None),
        **aug_flags,
    }

    add("datagen", cmd_datagen, {
        "--patients": dict(type=int, default=None),
        "--seed": dict(type=int, default=None),
        "--out": dict(required=True),
    })
    add("preprocess", cmd_preprocess, {
        "--data": dict(required=True),
        "--out": dict(required=True),
    })
    add("train", cmd_train, {
        "--data": dict(required=True),
        "--arch": dict(choices=["unet", "segnext_s"], default=None),
        "--seed": dict(type=int, default=None),
        "--epochs": dict(type=int, default=None),
        "--batch-size": dict(type=int, default=None),
        "--lr": dict(type=float, default=None),
        "--patience": dict(type=int, default=None),
        "--val-tta-variants": dict(type=int, default=None),
        "--folds": dict(type=int, default=None),
        "--test-fraction": dict(type=float, default=None),
        "--unet-width": dict(type=int, default=None),
        "--model-scale": dict(choices=["full", "small"], default=None),
        "--out": dict(required=True),
        **aug_flags,
    })
    add("infer", cmd_infer, {
        "--data": dict(required=True),
        "--unet": dict(required=True),
        "--segnext": dict(required=True),
        "--out": dict(required=True),
        **tta_flags,
    })
    add("evaluate", cmd_evaluate, {
        "--data": dict(required=True),
        "--unet": dict(required=True),
        "--segnext": dict(required=True),
        "--test-fraction": dict(type=float, default=None),
        "--out": dict(required=True),
        **tta_flags,
    })
    add("report", cmd_report, {
        "--metrics": dict(required=True),
        "--out": dict(required=True),
    })
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
