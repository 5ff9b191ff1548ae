"""Test-time augmentation and the two-model ensemble.

A seeded stream of affine transforms produces input variants; each model
predicts on its variants, predictions are warped back with the exact
inverse transform, averaged in a fixed order, thresholded, and the two
binary masks are combined by pixelwise union.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .dataio import PreparedSample
from .geometry import (
    IDENTITY,
    AffineParams,
    AffineRangeConfig,
    invert,
    sample_affine,
    to_matrix,
    warp,
)
from .models import Predictor


@dataclass(frozen=True)
class TTAConfig:
    n_variants: int = 100
    ranges: AffineRangeConfig = field(default_factory=AffineRangeConfig)
    include_identity: bool = True
    threshold: float = 0.5
    seed: int = 0
    # divide by per-pixel visibility counts instead of uniformly by N
    coverage_weighted: bool = False
    # "threshold_union" (default) or "per_variant_union" for ablation
    combiner: str = "threshold_union"

    def __post_init__(self):
        if self.n_variants < 1:
            raise ValueError("n_variants must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class EnsemblePrediction:
    final_mask: np.ndarray  # union of the two per-model masks
    prob_maps: dict  # arch -> averaged ProbMap
    member_masks: dict  # arch -> thresholded BinMask
    transform_log: dict  # arch -> list of AffineParams


def _sample_variants(rng, config: TTAConfig, n: int) -> list[AffineParams]:
    return [sample_affine(rng, config.ranges) for _ in range(n)]


def _averaged_prediction(
    model: Predictor,
    image: np.ndarray,
    params: list[AffineParams],
    config: TTAConfig,
) -> np.ndarray:
    side = image.shape[0]
    matrices = [to_matrix(p, side) for p in params]
    warped = np.stack(
        [image if p.is_identity() else warp(image, m, "bilinear") for p, m in zip(params, matrices)]
    )
    preds = model.predict(warped)
    restored = [
        pred if p.is_identity() else warp(pred, invert(m), "bilinear")
        for pred, p, m in zip(preds, params, matrices)
    ]
    if config.coverage_weighted:
        ones = np.ones_like(image)
        cover = np.zeros_like(image, dtype=np.float64)
        for p, m in zip(params, matrices):
            cover += ones if p.is_identity() else warp(ones, invert(m), "bilinear")
        total = np.zeros_like(image, dtype=np.float64)
        for r in restored:
            total += r
        return (total / np.maximum(cover, 1e-12)).astype(np.float32)
    total = np.zeros_like(image, dtype=np.float64)
    for r in restored:  # fixed reduction order: schedule-invariant result
        total += r
    return (total / len(restored)).astype(np.float32)


def tta_predict(model: Predictor, image: np.ndarray, config: TTAConfig) -> np.ndarray:
    """Averaged probability map over N affine variants of one image."""
    rng = np.random.default_rng(config.seed)
    params = _sample_variants(rng, config, config.n_variants)
    if config.include_identity:
        params[0] = IDENTITY
    return _averaged_prediction(model, image, params, config)


def threshold_mask(prob: np.ndarray, threshold: float) -> np.ndarray:
    return (prob >= threshold).astype(np.uint8)


def planet_s_predict(
    unet: Predictor, segnext: Predictor, image: np.ndarray, config: TTAConfig
) -> EnsemblePrediction:
    """Full two-model ensemble: 2N variants from one seeded stream, the
    first N to the U-Net and the rest to SegNeXt; per-model averaged and
    thresholded predictions are combined by pixelwise union."""
    if unet is None or segnext is None:
        raise ValueError("both ensemble members must be provided")
    rng = np.random.default_rng(config.seed)
    params = _sample_variants(rng, config, 2 * config.n_variants)
    if config.include_identity:
        params[0] = IDENTITY
        params[config.n_variants] = IDENTITY

    prob_maps, member_masks, log = {}, {}, {}
    for arch, model, member_params in (
        ("unet", unet, params[: config.n_variants]),
        ("segnext_s", segnext, params[config.n_variants :]),
    ):
        if config.combiner == "per_variant_union":
            side = image.shape[0]
            mask = np.zeros_like(image, dtype=np.uint8)
            acc = np.zeros_like(image, dtype=np.float64)
            for p in member_params:
                m = to_matrix(p, side)
                pred = model.predict(image if p.is_identity() else warp(image, m, "bilinear"))[0]
                back = pred if p.is_identity() else warp(pred, invert(m), "bilinear")
                acc += back
                mask |= threshold_mask(back, config.threshold)
            prob_maps[arch] = (acc / len(member_params)).astype(np.float32)
            member_masks[arch] = mask
        else:
            prob_maps[arch] = _averaged_prediction(model, image, member_params, config)
            member_masks[arch] = threshold_mask(prob_maps[arch], config.threshold)
        log[arch] = list(member_params)

    final = member_masks["unet"] | member_masks["segnext_s"]
    return EnsemblePrediction(
        final_mask=final, prob_maps=prob_maps, member_masks=member_masks, transform_log=log
    )


def derive_seed(root_seed: int, image_id: str) -> int:
    """Stable per-image seed, independent of processing order."""
    digest = hashlib.sha256(f"{root_seed}:{image_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**32)


def predict_dataset(
    unet: Predictor,
    segnext: Predictor,
    samples: list[PreparedSample],
    config: TTAConfig,
) -> list[tuple[str, EnsemblePrediction]]:
    """Per-image ensemble predictions with order-independent seeding."""
    results = []
    for s in samples:
        per_image = replace(config, seed=derive_seed(config.seed, s.image_id))
        results.append((s.image_id, planet_s_predict(unet, segnext, s.canvas.image, per_image)))
    return results
