"""Evaluation reporting: per-image metrics tables, aggregate summaries
with paired statistics, and the IoU box plot / component-count-difference
histogram figures."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .objectives import MetricsRecord, paired_t_test, wilcoxon_signed_rank

CSV_COLUMNS = ["system", "image_id", "iou", "cc_pred", "cc_gt", "cc_abs_diff"]


def write_metrics_csv(records_by_system: dict[str, list[MetricsRecord]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for system in sorted(records_by_system):
            for r in records_by_system[system]:
                writer.writerow(
                    [system, r.image_id, f"{r.iou:.10f}", r.cc_pred, r.cc_gt, r.cc_abs_diff]
                )


def read_metrics_csv(path) -> dict[str, list[MetricsRecord]]:
    out: dict[str, list[MetricsRecord]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["system"], []).append(
                MetricsRecord(
                    image_id=row["image_id"],
                    iou=float(row["iou"]),
                    cc_pred=int(row["cc_pred"]),
                    cc_gt=int(row["cc_gt"]),
                )
            )
    return out


def _paired_stats(records_by_system: dict[str, list[MetricsRecord]]) -> dict:
    """Paired t-test on IoU and Wilcoxon on CCC absolute differences
    between exactly two systems; degenerate cases are reported as an
    "identical" verdict rather than a p-value."""
    systems = sorted(records_by_system)
    if len(systems) != 2:
        return {}
    a, b = (records_by_system[s] for s in systems)
    ids_a = [r.image_id for r in a]
    ids_b = [r.image_id for r in b]
    if ids_a != ids_b:
        raise ValueError("systems cover different image sets; cannot pair")
    stats: dict = {"compared_systems": systems}
    try:
        t = paired_t_test([r.iou for r in a], [r.iou for r in b])
        stats["iou_paired_t"] = {"t": t.statistic, "p": t.p_value, "n": t.n_effective}
    except ValueError:
        stats["iou_paired_t"] = {"verdict": "identical"}
    try:
        w = wilcoxon_signed_rank(
            [r.cc_abs_diff for r in a], [r.cc_abs_diff for r in b]
        )
        stats["ccc_wilcoxon"] = {
            "W": w.statistic,
            "p": w.p_value,
            "n_effective": w.n_effective,
        }
    except ValueError:
        stats["ccc_wilcoxon"] = {"verdict": "identical"}
    return stats


def summarize(records_by_system: dict[str, list[MetricsRecord]]) -> dict:
    summary: dict = {"systems": {}}
    for system, records in sorted(records_by_system.items()):
        ious = np.array([r.iou for r in records])
        match = sum(1 for r in records if r.cc_abs_diff == 0)
        summary["systems"][system] = {
            "n_images": len(records),
            "mean_iou": float(ious.mean()),
            "sd_iou": float(ious.std(ddof=1)) if len(records) > 1 else 0.0,
            "ccc_match_count": match,
            "ccc_match_fraction": match / len(records),
        }
    summary.update(_paired_stats(records_by_system))
    return summary


def plot_iou_boxplot(records_by_system, path) -> None:
    systems = sorted(records_by_system)
    data = [[r.iou for r in records_by_system[s]] for s in systems]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.boxplot(data, tick_labels=systems)
    ax.set_ylabel("IoU")
    ax.set_title("Per-image IoU by system")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)


def plot_ccc_histogram(records_by_system, path) -> None:
    systems = sorted(records_by_system)
    fig, ax = plt.subplots(figsize=(5, 4))
    diffs = [[r.cc_abs_diff for r in records_by_system[s]] for s in systems]
    max_diff = max((max(d) for d in diffs if d), default=0)
    bins = np.arange(max_diff + 2) - 0.5
    width = 0.8 / len(systems)
    for i, (system, d) in enumerate(zip(systems, diffs)):
        counts, _ = np.histogram(d, bins=bins)
        ax.bar(np.arange(max_diff + 1) + i * width, counts, width=width, label=system)
    ax.set_xlabel("|predicted components - true components|")
    ax.set_ylabel("images")
    ax.set_title("Component-count agreement")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)
