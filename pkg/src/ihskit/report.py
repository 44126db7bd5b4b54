"""Report rendering: plain-text tables, CSV, and matplotlib figures."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .analysis import BiasProbeResult, ErrorRecord
from .training import RunReport

# Column layout mirrors the per-class/overall results tables: class blocks
# first, then the overall scores.
_CLASS_FIELDS = ("precision", "recall", "f1")
_OVERALL_FIELDS = ("accuracy", "f1_weighted", "f1_macro")


def _cell(report: RunReport, key: str) -> str:
    return f"{100 * report.mean[key]:.2f} ({100 * report.std[key]:.2f})"


def format_report_table(report: RunReport, title: str = "results") -> str:
    """Mean (std) per metric, in percent, one block per class then overall."""
    lines = [title, "=" * len(title), ""]
    header = f"{'':12s}" + "".join(f"{f:>16s}" for f in _CLASS_FIELDS)
    lines.append(header)
    for cls in ("not_hate", "hate"):
        row = f"{cls:12s}" + "".join(
            f"{_cell(report, f'{cls}.{field}'):>16s}" for field in _CLASS_FIELDS
        )
        lines.append(row)
    lines.append("")
    lines.append(f"{'':12s}" + "".join(f"{f:>16s}" for f in _OVERALL_FIELDS))
    lines.append(
        f"{'overall':12s}" + "".join(f"{_cell(report, f):>16s}" for f in _OVERALL_FIELDS)
    )
    lines.append("")
    lines.append(f"seeds: {report.seeds}")
    return "\n".join(lines) + "\n"


def write_report_csv(report: RunReport, path: str | Path) -> None:
    """One row per seed plus mean and std rows; columns are metric fields."""
    keys = sorted(report.mean.keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row"] + keys)
        for seed, metrics in zip(report.seeds, report.per_seed):
            flat = metrics.flatten()
            writer.writerow([f"seed-{seed}"] + [f"{flat[k]:.6f}" for k in keys])
        writer.writerow(["mean"] + [f"{report.mean[k]:.6f}" for k in keys])
        writer.writerow(["std"] + [f"{report.std[k]:.6f}" for k in keys])


def render_report_figure(report: RunReport, path: str | Path) -> None:
    """Bar chart of the overall metrics with std error bars."""
    fields = list(_OVERALL_FIELDS) + ["hate.f1", "not_hate.f1"]
    means = [100 * report.mean[f] for f in fields]
    stds = [100 * report.std[f] for f in fields]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(fields)), means, yerr=stds, capsize=4, color="#4878d0")
    ax.set_xticks(range(len(fields)))
    ax.set_xticklabels(fields, rotation=20, ha="right")
    ax.set_ylabel("score (%)")
    ax.set_ylim(0, 100)
    ax.set_title(f"mean over seeds {report.seeds}")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def format_probe_table(result: BiasProbeResult) -> str:
    width = max(len(t) for t, _ in result.rows) if result.rows else 10
    lines = [f"template: {result.template}", ""]
    lines.append(f"{'target':{width}s}  hate probability")
    for target, prob in result.rows:
        lines.append(f"{target:{width}s}  {prob:.4f}")
    return "\n".join(lines) + "\n"


def render_probe_figure(result: BiasProbeResult, path: str | Path) -> None:
    targets = [t for t, _ in result.rows]
    probs = [p for _, p in result.rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(targets)), probs, color="#d65f5f")
    ax.set_xticks(range(len(targets)))
    ax.set_xticklabels(targets, rotation=20, ha="right")
    ax.set_ylabel("hate probability")
    ax.set_ylim(0, 1)
    ax.axhline(0.5, color="gray", linestyle="--", linewidth=1)
    ax.set_title(result.template.replace("{target}", "<target>"))
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def format_error_table(records: Sequence[ErrorRecord]) -> str:
    lines = [f"{'probability':>11s}  {'true':>8s}  {'predicted':>9s}  sample"]
    for r in records:
        lines.append(
            f"{r.predicted_probability:11.4f}  {r.true_label.name:>8s}  "
            f"{r.predicted_label.name:>9s}  [{r.sample_id}] {r.text[:80]}"
        )
    return "\n".join(lines) + "\n"
