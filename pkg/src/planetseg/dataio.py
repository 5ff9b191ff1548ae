"""Dataset ingestion, geometric standardization to 256x256, patient-level
splitting, and a deterministic synthetic dataset generator.

Dataset layout on disk:
    <root>/<patient_id>/slice<k>.png        8/16-bit single-channel image
    <root>/<patient_id>/slice<k>_mask.png   mask stored as {0, 255}
    <root>/manifest.csv                     patient_id, slice_index,
                                            image_path, mask_path,
                                            n_components (optional)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

CANVAS_SIDE = 256
MAX_SLICES_PER_PATIENT = 5

MANIFEST_COLUMNS = ["patient_id", "slice_index", "image_path", "mask_path", "n_components"]


@dataclass(frozen=True)
class ImageSample:
    """One grayscale slice with its binary mask and patient identity."""

    patient_id: str
    slice_index: int
    image: np.ndarray  # HxW float32 in [0, 1]
    mask: np.ndarray  # HxW uint8 in {0, 1}
    source_size: tuple[int, int]

    @property
    def image_id(self) -> str:
        return f"{self.patient_id}_s{self.slice_index}"


@dataclass(frozen=True)
class Canvas:
    """A sample standardized to the 256x256 working geometry."""

    image: np.ndarray  # 256x256 float32
    mask: np.ndarray  # 256x256 uint8
    scale_applied: float
    pad_top: int
    pad_left: int

    def geometry_dict(self) -> dict:
        return {
            "scale_applied": self.scale_applied,
            "pad_top": self.pad_top,
            "pad_left": self.pad_left,
        }


@dataclass(frozen=True)
class PreparedSample:
    """Standardized sample plus the identity needed downstream."""

    image_id: str
    patient_id: str
    canvas: Canvas


@dataclass(frozen=True)
class DatasetSplit:
    train_patients: frozenset[str]
    test_patients: frozenset[str]


def _read_gray(path: Path, row_no: int) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FileNotFoundError(f"manifest row {row_no}: cannot read {path}")
    if img.ndim != 2:
        raise ValueError(f"manifest row {row_no}: {path} is not single-channel")
    return img


def load_dataset(root, manifest: Path | str | None = None) -> list[ImageSample]:
    """Load every manifest row, normalize intensities to [0, 1] per image,
    binarize masks, and return samples sorted by (patient_id, slice_index)."""
    root = Path(root)
    manifest = Path(manifest) if manifest is not None else root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"manifest not found: {manifest}")

    samples = []
    with open(manifest, newline="") as fh:
        for row_no, row in enumerate(csv.DictReader(fh), start=1):
            image = _read_gray(root / row["image_path"], row_no)
            mask_raw = _read_gray(root / row["mask_path"], row_no)
            if image.shape != mask_raw.shape:
                raise ValueError(
                    f"manifest row {row_no}: image {image.shape} and mask "
                    f"{mask_raw.shape} dimensions differ"
                )
            values = np.unique(mask_raw)
            allowed = {0, int(values.max())} if values.size else {0}
            if not set(int(v) for v in values) <= allowed:
                raise ValueError(
                    f"manifest row {row_no}: mask values {values.tolist()} are "
                    "not binary {0, max}"
                )
            mask = (mask_raw > 0).astype(np.uint8)

            img = image.astype(np.float32)
            lo, hi = float(img.min()), float(img.max())
            img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)

            samples.append(
                ImageSample(
                    patient_id=row["patient_id"],
                    slice_index=int(row["slice_index"]),
                    image=img,
                    mask=mask,
                    source_size=image.shape,
                )
            )

    per_patient: dict[str, list[int]] = {}
    for s in samples:
        per_patient.setdefault(s.patient_id, []).append(s.slice_index)
    for pid, indices in per_patient.items():
        if len(indices) > MAX_SLICES_PER_PATIENT:
            raise ValueError(f"patient {pid} has {len(indices)} slices (max 5)")
        if len(set(indices)) != len(indices):
            raise ValueError(f"patient {pid} has duplicate slice indices")

    samples.sort(key=lambda s: (s.patient_id, s.slice_index))
    return samples


def standardize(sample: ImageSample) -> Canvas:
    """Scale the longest side to 256 (aspect preserved) and zero-pad the
    shorter side symmetrically; odd pad remainders go bottom/right."""
    h, w = sample.image.shape
    if h < 8 or w < 8:
        raise ValueError(f"degenerate input size {h}x{w} (minimum 8x8)")
    scale = CANVAS_SIDE / max(h, w)
    if h >= w:
        new_h, new_w = CANVAS_SIDE, max(1, round(w * scale))
    else:
        new_h, new_w = max(1, round(h * scale)), CANVAS_SIDE
    image = cv2.resize(sample.image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    mask = cv2.resize(sample.mask, (new_w, new_h), interpolation=cv2.INTER_NEAREST)

    pad_v = CANVAS_SIDE - new_h
    pad_h = CANVAS_SIDE - new_w
    pad_top, pad_left = pad_v // 2, pad_h // 2
    out_img = np.zeros((CANVAS_SIDE, CANVAS_SIDE), dtype=np.float32)
    out_msk = np.zeros((CANVAS_SIDE, CANVAS_SIDE), dtype=np.uint8)
    out_img[pad_top : pad_top + new_h, pad_left : pad_left + new_w] = image
    out_msk[pad_top : pad_top + new_h, pad_left : pad_left + new_w] = mask
    return Canvas(out_img, out_msk, scale_applied=scale, pad_top=pad_top, pad_left=pad_left)


def prepare_samples(samples: list[ImageSample]) -> list[PreparedSample]:
    return [PreparedSample(s.image_id, s.patient_id, standardize(s)) for s in samples]


def split_by_patient(
    samples: list[ImageSample], test_fraction: float, seed: int
) -> DatasetSplit:
    """Random patient-level split; all slices of a patient stay together."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    patients = sorted({s.patient_id for s in samples})
    if len(patients) < 2:
        raise ValueError("need at least 2 patients to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(patients))
    n_test = max(1, math.floor(len(patients) * test_fraction))
    test = frozenset(patients[i] for i in order[:n_test])
    train = frozenset(patients) - test
    return DatasetSplit(train_patients=train, test_patients=test)


def select_samples(samples: list[ImageSample], patients) -> list[ImageSample]:
    patients = set(patients)
    return [s for s in samples if s.patient_id in patients]


def _ellipse_mask(h, w, cy, cx, a, b, angle):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    ca, sa = math.cos(angle), math.sin(angle)
    u = ca * dx + sa * dy
    v = -sa * dx + ca * dy
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.uint8)


def generate_synthetic(n_patients: int, seed: int, out_root) -> Path:
    """Write a deterministic synthetic dataset of bright elliptical
    "placenta" regions over noisy backgrounds, 5 slices per patient, and
    return the manifest path.

    Roughly a third of the patients carry a second disjoint component so
    component-count comparisons exercise the >1 case.
    """
    if n_patients < 2:
        raise ValueError(f"need at least 2 patients, got {n_patients}")
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for p in range(n_patients):
        pid = f"synth{p:03d}"
        pdir = out_root / pid
        pdir.mkdir(exist_ok=True)
        h = int(rng.integers(200, 385))
        w = int(rng.integers(200, 385))
        short = min(h, w)
        a0 = rng.uniform(0.16, 0.26) * short
        b0 = rng.uniform(0.12, 0.20) * short
        cy0 = h / 2 + rng.uniform(-0.06, 0.06) * h
        cx0 = w / 2 + rng.uniform(-0.06, 0.06) * w
        ang0 = rng.uniform(0, math.pi)
        dcy = rng.uniform(-2.0, 2.0)
        dcx = rng.uniform(-2.0, 2.0)
        dang = rng.uniform(-0.08, 0.08)
        two_components = rng.random() < 0.35
        if two_components:
            # put the second blob in the corner farthest from the first
            # so the components stay disjoint across the pose drift
            sec_r = rng.uniform(0.05, 0.08) * short
            sy = 0.16 * h if cy0 > h / 2 else 0.84 * h
            sx = 0.16 * w if cx0 > w / 2 else 0.84 * w
        for k in range(5):
            cy, cx = cy0 + k * dcy, cx0 + k * dcx
            ang = ang0 + k * dang
            mask = _ellipse_mask(h, w, cy, cx, a0, b0, ang)
            n_comp = 1
            if two_components:
                second = _ellipse_mask(h, w, sy, sx, sec_r, sec_r * 0.8, ang)
                if not (mask & second).any():
                    mask |= second
                    n_comp = 2
            img = rng.normal(0.15, 0.05, size=(h, w))
            img += mask * rng.normal(0.62, 0.03)
            img += rng.normal(0.0, 0.03, size=(h, w))
            img = np.clip(img, 0.0, 1.0)
            img_u8 = np.round(img * 255).astype(np.uint8)
            img_path = pdir / f"slice{k}.png"
            msk_path = pdir / f"slice{k}_mask.png"
            cv2.imwrite(str(img_path), img_u8)
            cv2.imwrite(str(msk_path), mask * 255)
            rows.append(
                {
                    "patient_id": pid,
                    "slice_index": k,
                    "image_path": str(img_path.relative_to(out_root)),
                    "mask_path": str(msk_path.relative_to(out_root)),
                    "n_components": n_comp,
                }
            )
    manifest = out_root / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return manifest
