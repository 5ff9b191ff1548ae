"""Train two small backbones on a synthetic cohort and run the
two-model ensemble on a held-out patient, end to end in a few minutes.

Run from the repository root:  python3 demos/03_small_ensemble.py
"""

import tempfile
from pathlib import Path


from planetseg import (
    SegNeXtConfig,
    TrainConfig,
    generate_synthetic,
    load_dataset,
    planet_s_predict,
    prepare_samples,
    split_by_patient,
    train_one,
)
from planetseg.dataio import select_samples
from planetseg.inference import TTAConfig
from planetseg.objectives import count_cc, hard_iou

root = Path(tempfile.mkdtemp(prefix="planetseg_demo_"))
generate_synthetic(n_patients=8, seed=3, out_root=root)
samples = load_dataset(root)
split = split_by_patient(samples, test_fraction=0.25, seed=0)
train = prepare_samples(select_samples(samples, split.train_patients))
test = prepare_samples(select_samples(samples, split.test_patients))
print(f"{len(train)} training images, {len(test)} held-out images")

small_segnext = SegNeXtConfig(depths=(1, 1, 2, 1), widths=(32, 64, 128, 256), decoder_width=64)
common = dict(epochs=4, batch_size=4, learning_rate=1e-3, seed=0,
              patience=4, val_tta_variants=2)

print("\ntraining U-Net (reduced width)...")
unet = train_one(TrainConfig(arch="unet", model_kwargs={"base_width": 16}, **common),
                 train, test)
print(f"  best validation IoU {unet.val_iou:.3f} at epoch {unet.epoch}")

print("training SegNeXt (small preset)...")
segnext = train_one(TrainConfig(arch="segnext_s", model_kwargs={"config": small_segnext},
                                **common), train, test)
print(f"  best validation IoU {segnext.val_iou:.3f} at epoch {segnext.epoch}")

tta = TTAConfig(n_variants=6, seed=0)
print("\nper-image ensemble results on the held-out patients:")
for s in test:
    pred = planet_s_predict(unet.predictor, segnext.predictor, s.canvas.image, tta)
    iou = hard_iou(pred.final_mask, s.canvas.mask)
    print(f"  {s.image_id}: IoU {iou:.3f}, components predicted "
          f"{count_cc(pred.final_mask)} vs true {count_cc(s.canvas.mask)}")
