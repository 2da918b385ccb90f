"""File-writing report helpers: delimited tables and rendered figures.

Everything here takes computed results (metric reports, statistics
documents, correlation results) and writes artifacts to disk; no statistics
are computed in this module. Figures render through the Agg backend so the
functions work headless.
"""

from __future__ import annotations

import csv
import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import InvalidInputError
from .evalstats import RANK_LABELS, CorrelationResult
from .imagecore import difference_map
from .metrics import MetricReport, report_rows
from .turing import STRUCTURES

__all__ = [
    "write_metric_csv",
    "write_rows_csv",
    "save_difference_map",
    "save_rank_figure",
    "save_stratified_rank_figure",
    "save_fool_rate_figure",
    "save_preservation_figure",
    "save_correlation_figure",
]


def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.6f}"
    return str(v)


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_metric_csv(report: MetricReport, path) -> None:
    write_rows_csv(path, ("metric", "mean", "std", "n", "n_excluded"),
                   report_rows(report))


def save_difference_map(gen, gt, path, title: str = "") -> None:
    """Generated image, ground truth, and their signed difference side by side.

    The difference panel uses a symmetric diverging scale: red where the
    generated image is brighter than the truth, blue where darker.
    """
    diff = difference_map(gen, gt)
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.6))
    for ax, img, name, kw in (
        (axes[0], gen, "generated", {"cmap": "gray", "vmin": 0.0, "vmax": 1.0}),
        (axes[1], gt, "ground truth", {"cmap": "gray", "vmin": 0.0, "vmax": 1.0}),
        (axes[2], diff, "difference", {"cmap": "bwr", "vmin": -1.0, "vmax": 1.0}),
    ):
        im = ax.imshow(img, **kw)
        ax.set_title(name)
        ax.axis("off")
    fig.colorbar(im, ax=axes[2], fraction=0.046)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _bar_with_ci(ax, names, means, lows, highs, significant=None):
    x = np.arange(len(names))
    yerr = np.array([
        [m - lo for m, lo in zip(means, lows)],
        [hi - m for m, hi in zip(means, highs)],
    ])
    ax.bar(x, means, yerr=yerr, capsize=4, color="#6699cc")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right")
    if significant:
        for i, name in enumerate(names):
            if significant.get(name):
                ax.text(x[i], means[i] + yerr[1][i] + 0.08, "†",
                        ha="center", fontsize=14)


def save_rank_figure(doc: dict, path) -> None:
    """Mean ranks with bootstrap CIs; daggers mark Holm-significant labels."""
    if doc.get("test_kind") != "rank6":
        raise InvalidInputError("expected a rank6 statistics document")
    stats = doc["mean_ranks"]
    names = [lab for lab in RANK_LABELS if lab in stats]
    means = [stats[n]["mean"] for n in names]
    lows = [stats[n]["ci_low"] for n in names]
    highs = [stats[n]["ci_high"] for n in names]
    fig, ax = plt.subplots(figsize=(7, 4))
    _bar_with_ci(ax, names, means, lows, highs, doc.get("significant") or {})
    ax.set_ylabel("mean rank (1 = best)")
    ax.set_ylim(0, 7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_stratified_rank_figure(doc: dict, path) -> None:
    """Experienced vs less-experienced mean ranks, grouped per label."""
    strat = doc.get("stratified") or {}
    groups = [(g, strat[g]) for g in ("experienced", "less_experienced")
              if strat.get(g) and strat[g].get("mean_ranks")]
    if not groups:
        raise InvalidInputError("no stratified rank data to plot")
    fig, ax = plt.subplots(figsize=(8, 4))
    width = 0.38
    x = np.arange(len(RANK_LABELS))
    for k, (gname, block) in enumerate(groups):
        stats = block["mean_ranks"]
        means = [stats[lab]["mean"] for lab in RANK_LABELS]
        lows = [stats[lab]["ci_low"] for lab in RANK_LABELS]
        highs = [stats[lab]["ci_high"] for lab in RANK_LABELS]
        yerr = np.array([
            [m - lo for m, lo in zip(means, lows)],
            [hi - m for m, hi in zip(means, highs)],
        ])
        ax.bar(x + (k - (len(groups) - 1) / 2) * width, means, width,
               yerr=yerr, capsize=3,
               label=f"{gname} (n={block['n_responses']})")
    ax.set_xticks(x)
    ax.set_xticklabels(RANK_LABELS, rotation=30, ha="right")
    ax.set_ylabel("mean rank (1 = best)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_fool_rate_figure(doc: dict, path) -> None:
    if doc.get("test_kind") != "spot":
        raise InvalidInputError("expected a spot statistics document")
    names = ["overall"]
    rates = [doc["fool_rate"]]
    for gname, block in (doc.get("stratified") or {}).items():
        if block.get("fool_rate") is not None:
            names.append(gname)
            rates.append(block["fool_rate"])
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.bar(np.arange(len(names)), rates, color="#cc8866")
    ax.axhline(50.0, linestyle="--", color="gray", label="indistinguishable (50%)")
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("fool rate (%)")
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_preservation_figure(doc: dict, path) -> None:
    """Per-structure preservation percentages, vitreous and other panels."""
    if doc.get("test_kind") != "anatomy":
        raise InvalidInputError("expected an anatomy statistics document")
    per = doc["per_structure"]
    panels = [
        ("vitreous body", [s for s in STRUCTURES if s.group == "vitreous"]),
        ("other structures", [s for s in STRUCTURES if s.group == "other"]),
    ]
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.2))
    for ax, (title, specs) in zip(axes, panels):
        names = [s.structure_id for s in specs if s.structure_id in per]
        vals = [per[n]["preservation"] for n in names]
        ax.bar(np.arange(len(names)), vals, color="#88aa77")
        ax.set_xticks(np.arange(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.set_ylim(0, 105)
        ax.set_ylabel("preservation (%)")
        ax.set_title(title)
    fig.suptitle(f"overall preservation {doc['overall']['preservation']:.1f}%")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_correlation_figure(result: CorrelationResult, path) -> None:
    """Annotated correlation heatmap; undefined cells are left blank."""
    m = len(result.names)
    fig, ax = plt.subplots(figsize=(1.1 * m + 2, 1.0 * m + 1.5))
    shown = np.where(result.undefined, np.nan, result.matrix)
    im = ax.imshow(shown, cmap="bwr", vmin=-1.0, vmax=1.0)
    ax.set_xticks(np.arange(m))
    ax.set_yticks(np.arange(m))
    ax.set_xticklabels(result.names, rotation=45, ha="right")
    ax.set_yticklabels(result.names)
    for i in range(m):
        for j in range(m):
            if not result.undefined[i, j]:
                ax.text(j, i, f"{result.matrix[i, j]:.2f}",
                        ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
