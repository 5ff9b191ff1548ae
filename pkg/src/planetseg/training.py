"""Training with on-the-fly affine augmentation, patient-grouped k-fold
cross-validation, and TTA-based model selection."""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path

import numpy as np
import torch

from .dataio import PreparedSample
from .geometry import AffineRangeConfig, sample_affine, to_matrix, warp
from .inference import TTAConfig, threshold_mask, tta_predict
from .models import Predictor, build
from .objectives import combined_loss, hard_iou


@dataclass(frozen=True)
class TrainConfig:
    arch: str
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    augment: AffineRangeConfig = field(default_factory=AffineRangeConfig)
    seed: int = 0
    patience: int = 15
    val_tta_variants: int = 4
    threshold: float = 0.5
    model_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "augment": {
                "rotation_deg": list(self.augment.rotation_deg),
                "shift": list(self.augment.shift),
                "scale": list(self.augment.scale),
            },
            "seed": self.seed,
            "patience": self.patience,
            "val_tta_variants": self.val_tta_variants,
            "threshold": self.threshold,
            "model_kwargs": {
                k: asdict(v) if is_dataclass(v) else v
                for k, v in self.model_kwargs.items()
            },
        }


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple  # of (frozenset train_patients, frozenset val_patients)


@dataclass
class Checkpoint:
    predictor: Predictor
    fold_index: int
    val_iou: float
    epoch: int
    history: list = field(default_factory=list)  # (epoch, mean loss, val IoU)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "checkpoint.pt"
        self.predictor.save(
            path,
            extra_card={
                "fold_index": self.fold_index,
                "val_iou": self.val_iou,
                "epoch": self.epoch,
            },
        )
        with open(directory / "metrics.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_iou"])
            writer.writerows(self.history)
        return path


def make_folds(patients, k: int, seed: int) -> FoldPlan:
    """Random partition into k validation sets of near-equal size."""
    patients = sorted(set(patients))
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(patients):
        raise ValueError(f"cannot make {k} folds from {len(patients)} patients")
    rng = np.random.default_rng(seed)
    order = [patients[i] for i in rng.permutation(len(patients))]
    chunks = [order[i::k] for i in range(k)]
    folds = tuple(
        (frozenset(order) - frozenset(chunk), frozenset(chunk)) for chunk in chunks
    )
    return FoldPlan(folds=folds)


def _validation_iou(predictor, val_samples, config: TrainConfig) -> float:
    tta = TTAConfig(
        n_variants=config.val_tta_variants,
        ranges=config.augment,
        include_identity=True,
        threshold=config.threshold,
        seed=config.seed,
    )
    ious = []
    for s in val_samples:
        prob = tta_predict(predictor, s.canvas.image, tta)
        ious.append(hard_iou(threshold_mask(prob, config.threshold), s.canvas.mask))
    return float(np.mean(ious))


def train_one(
    config: TrainConfig,
    train_samples: list[PreparedSample],
    val_samples: list[PreparedSample],
    fold_index: int = 0,
) -> Checkpoint:
    """Train one backbone; every epoch each sample gets a freshly sampled
    affine warp (image bilinear, mask nearest), and the epoch with the
    best TTA validation IoU is retained."""
    if not train_samples or not val_samples:
        raise ValueError("train and validation sets must be nonempty")
    torch.manual_seed(config.seed)
    predictor = build(config.arch, config.seed, **config.model_kwargs)
    if config.optimizer != "adam":
        raise ValueError(f"unsupported optimizer {config.optimizer!r}")
    opt = torch.optim.Adam(predictor.net.parameters(), lr=config.learning_rate)

    order_rng = np.random.default_rng(config.seed + 1)
    aug_rng = np.random.default_rng(config.seed + 2)
    augment_off = config.augment.is_identity_only()
    side = train_samples[0].canvas.image.shape[0]

    best = None
    best_iou = -1.0
    since_best = 0
    history = []
    for epoch in range(config.epochs):
        predictor.net.train()
        order = order_rng.permutation(len(train_samples))
        losses = []
        for start in range(0, len(order), config.batch_size):
            images, masks = [], []
            for idx in order[start : start + config.batch_size]:
                s = train_samples[idx]
                img, msk = s.canvas.image, s.canvas.mask
                if not augment_off:
                    params = sample_affine(aug_rng, config.augment)
                    if not params.is_identity():
                        m = to_matrix(params, side)
                        img = warp(img, m, "bilinear")
                        msk = warp(msk, m, "nearest")
                images.append(img)
                masks.append(msk.astype(np.float32))
            x = torch.from_numpy(np.stack(images)).unsqueeze(1)
            y = torch.from_numpy(np.stack(masks)).unsqueeze(1)
            p = predictor.forward_t(x)
            loss = combined_loss(p, y).total
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))

        val_iou = _validation_iou(predictor, val_samples, config)
        history.append((epoch, float(np.mean(losses)), val_iou))
        if val_iou > best_iou:
            best_iou = val_iou
            best = copy.deepcopy(predictor.net.state_dict())
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    predictor.net.load_state_dict(best)
    predictor.net.eval()
    return Checkpoint(
        predictor=predictor,
        fold_index=fold_index,
        val_iou=best_iou,
        epoch=best_epoch,
        history=history,
    )


def cross_validate(
    config: TrainConfig,
    samples_by_patient: dict[str, list[PreparedSample]],
    k: int = 5,
    out_dir=None,
) -> Checkpoint:
    """Train one model per fold and return the checkpoint with the best
    TTA validation IoU as the definitive model; all folds are persisted
    when an output directory is given."""
    plan = make_folds(samples_by_patient.keys(), k, config.seed)
    checkpoints = []
    for i, (train_p, val_p) in enumerate(plan.folds):
        train_samples = [s for p in sorted(train_p) for s in samples_by_patient[p]]
        val_samples = [s for p in sorted(val_p) for s in samples_by_patient[p]]
        try:
            ckpt = train_one(config, train_samples, val_samples, fold_index=i)
        except Exception as exc:
            raise RuntimeError(f"fold {i} failed: {exc}") from exc
        checkpoints.append(ckpt)
        if out_dir is not None:
            ckpt.save(Path(out_dir) / f"fold{i}")

    definitive = max(checkpoints, key=lambda c: c.val_iou)
    if out_dir is not None:
        summary = {
            "architecture": config.arch,
            "fold_val_iou": [c.val_iou for c in checkpoints],
            "definitive_fold": definitive.fold_index,
            "definitive_checkpoint": f"fold{definitive.fold_index}/checkpoint.pt",
        }
        Path(out_dir, "cv_summary.json").write_text(json.dumps(summary, indent=2))
    return definitive


def group_by_patient(samples: list[PreparedSample]) -> dict[str, list[PreparedSample]]:
    grouped: dict[str, list[PreparedSample]] = {}
    for s in samples:
        grouped.setdefault(s.patient_id, []).append(s)
    return grouped
