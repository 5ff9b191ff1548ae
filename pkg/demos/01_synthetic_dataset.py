"""Walk through the synthetic dataset: generate a small cohort, load it
back, and standardize a slice to the 256x256 working geometry.

Run from the repository root:  python3 demos/01_synthetic_dataset.py
"""

import tempfile
from pathlib import Path


from planetseg import generate_synthetic, load_dataset, split_by_patient, standardize

root = Path(tempfile.mkdtemp(prefix="planetseg_demo_"))
manifest = generate_synthetic(n_patients=6, seed=11, out_root=root)
print(f"wrote dataset under {root}")
print(f"manifest: {manifest}")

samples = load_dataset(root)
print(f"\nloaded {len(samples)} samples from {len({s.patient_id for s in samples})} patients")

s = samples[0]
print(f"\nfirst sample: {s.image_id}, source size {s.source_size}")
print(f"  intensity range [{s.image.min():.3f}, {s.image.max():.3f}]")
print(f"  mask foreground fraction {s.mask.mean():.3%}")

canvas = standardize(s)
print(f"\nstandardized to {canvas.image.shape}:")
print(f"  scale applied {canvas.scale_applied:.4f}")
print(f"  padding top {canvas.pad_top}, left {canvas.pad_left}")
print(f"  padded border is zero: {bool((canvas.image[:, :canvas.pad_left] == 0).all())}")

split = split_by_patient(samples, test_fraction=0.34, seed=0)
print(f"\npatient-level split: {sorted(split.train_patients)} | {sorted(split.test_patients)}")

# coarse ASCII view of the standardized mask
small = canvas.mask[::16, ::16]
print("\nmask (16x downsampled):")
for row in small:
    print("".join("#" if v else "." for v in row))
