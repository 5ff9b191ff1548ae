"""Training loss (BCE + soft IoU), evaluation metrics (hard IoU and
connected-component counts), and the paired statistical tests used to
compare two segmentation systems."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.stats import norm, rankdata
from scipy.stats import t as t_dist

EPS = 1e-7


@dataclass(frozen=True)
class LossValue:
    total: torch.Tensor
    bce_part: torch.Tensor
    iou_part: torch.Tensor


@dataclass(frozen=True)
class MetricsRecord:
    image_id: str
    iou: float
    cc_pred: int
    cc_gt: int

    @property
    def cc_abs_diff(self) -> int:
        return abs(self.cc_pred - self.cc_gt)


@dataclass(frozen=True)
class StatsResult:
    test_name: str  # "paired_t" or "wilcoxon_signed_rank"
    statistic: float
    p_value: float
    n_effective: int


def _as_pair(p, y):
    p = torch.as_tensor(p)
    y = torch.as_tensor(y, dtype=p.dtype)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(y.shape)}")
    return p, y


def bce_loss(p, y) -> torch.Tensor:
    """Pixel-mean binary cross-entropy, clamped 1e-7 from each end."""
    p, y = _as_pair(p, y)
    p = torch.clamp(p, EPS, 1.0 - EPS)
    return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).mean()


def soft_iou_loss(p, y) -> torch.Tensor:
    """1 - soft IoU, the differentiable relaxation where intersection and
    union become sums of products over the probability field."""
    p, y = _as_pair(p, y)
    inter = (p * y).sum()
    union = p.sum() + y.sum() - inter
    # symmetric epsilon so an empty prediction of an empty truth costs 0
    return 1.0 - (inter + EPS) / (union + EPS)


def combined_loss(p, y) -> LossValue:
    bce = bce_loss(p, y)
    iou = soft_iou_loss(p, y)
    return LossValue(total=bce + iou, bce_part=bce, iou_part=iou)


def _check_binary(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m)
    if not np.isin(m, (0, 1)).all():
        raise ValueError(f"{name} is not binary")
    return m.astype(bool)


def hard_iou(a: np.ndarray, b: np.ndarray) -> float:
    """|a ∩ b| / |a ∪ b|; two empty masks count as a perfect match."""
    a = _check_binary(a, "a")
    b = _check_binary(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


_NEIGHBORS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_NEIGHBORS_8 = _NEIGHBORS_4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


def count_cc(mask: np.ndarray, connectivity: int = 8) -> int:
    """Number of maximal connected foreground components, via an explicit
    stack-based flood fill (no recursion depth concerns)."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    m = _check_binary(mask, "mask")
    neighbors = _NEIGHBORS_8 if connectivity == 8 else _NEIGHBORS_4
    h, w = m.shape
    seen = np.zeros_like(m, dtype=bool)
    count = 0
    for r0, c0 in zip(*np.nonzero(m)):
        if seen[r0, c0]:
            continue
        count += 1
        stack = [(int(r0), int(c0))]
        seen[r0, c0] = True
        while stack:
            r, c = stack.pop()
            for dr, dc in neighbors:
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and m[rr, cc] and not seen[rr, cc]:
                    seen[rr, cc] = True
                    stack.append((rr, cc))
    return count


def metrics_record(
    image_id: str, pred: np.ndarray, gt: np.ndarray, connectivity: int = 8
) -> MetricsRecord:
    return MetricsRecord(
        image_id=image_id,
        iou=hard_iou(pred, gt),
        cc_pred=count_cc(pred, connectivity),
        cc_gt=count_cc(gt, connectivity),
    )


def paired_t_test(xs, ys) -> StatsResult:
    """Two-sided paired t-test on x - y."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("inputs must be 1-D and of equal length")
    n = xs.size
    if n < 2:
        raise ValueError("need at least 2 pairs")
    d = xs - ys
    sd = d.std(ddof=1)
    if sd == 0:
        raise ValueError("zero-variance differences: all pairs are identical shifts")
    t = d.mean() / (sd / math.sqrt(n))
    p = 2.0 * t_dist.sf(abs(t), n - 1)
    return StatsResult("paired_t", float(t), float(min(p, 1.0)), n)


# exact-p threshold; above this the normal approximation takes over
_WILCOXON_EXACT_MAX_N = 25


def _exact_min_tail_p(ranks: np.ndarray, w_min: float) -> float:
    """P(min(W+, W-) <= observed) over all 2^n equally likely sign
    assignments, via a subset-sum distribution over doubled ranks."""
    r2 = np.round(2 * ranks).astype(np.int64)  # doubled ranks are integers even with midranks
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in r2:
        counts[r:] = counts[r:] + counts[:-r]
    counts /= counts.sum()
    w2 = int(round(2 * w_min))
    hi_start = total - w2
    if hi_start <= w2:  # tails overlap: every outcome is at least as extreme
        return 1.0
    p = counts[: w2 + 1].sum() + counts[hi_start:].sum()
    return float(min(1.0, p))


def wilcoxon_signed_rank(xs, ys) -> StatsResult:
    """Two-sided Wilcoxon signed-rank test on x - y, dropping zero
    differences and midranking ties. Exact enumeration for small n,
    tie-corrected normal approximation otherwise."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("inputs must be 1-D and of equal length")
    d = xs - ys
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise ValueError("all pairs tied: no nonzero differences remain")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    if n <= _WILCOXON_EXACT_MAX_N:
        p = _exact_min_tail_p(ranks, w)
    else:
        mean_w = n * (n + 1) / 4.0
        var_w = n * (n + 1) * (2 * n + 1) / 24.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var_w -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
        z = (w - mean_w) / math.sqrt(var_w)
        p = min(1.0, 2.0 * norm.cdf(z))
    return StatsResult("wilcoxon_signed_rank", w, float(p), int(n))
