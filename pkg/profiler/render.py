"""Timing report output: JSON, aligned text tables, CSV and an SVG proportion chart."""

import csv
import json
import statistics
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from profiler.timing import COMPONENTS, TimingReport  # noqa: E402

NO_REDUCTION = "−"
COLUMN_TITLES = {
    "feature_extraction": "Feature extraction",
    "transformer_encoding": "Transformer",
    "loss_calculation": "Loss",
    "others": "Others",
}
COLORS = ("#4c72b0", "#dd8452", "#55a868", "#8c8c8c")


def format_reduction(value: Optional[float]) -> str:
    """Percentage, or a dash when there is no saving"""
    if value is None or value < 0:
        return NO_REDUCTION
    return f"{value * 100:.1f}%"


def report_json(report: TimingReport, **extra) -> str:
    return json.dumps({**report.to_dict(), **extra}, indent=2, sort_keys=True)


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]

    def line(cells):
        return "  ".join(str(c).rjust(w) if i else str(c).ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))

    out = [line(header), "-" * (sum(widths) + 2 * (len(widths) - 1))]
    out += [line(r) for r in rows]
    return "\n".join(out)


def comparison_table(baseline: TimingReport, new: TimingReport,
                     names: Sequence[str] = ("baseline", "new")) -> str:
    """Seconds per window for each component, then the per-component reduction"""
    new = new.with_baseline(baseline)
    header = ["", *(COLUMN_TITLES[c] for c in COMPONENTS), "steps/s"]
    rows = [
        [names[0], *(f"{baseline.seconds[c]:.3f}" for c in COMPONENTS), f"{baseline.steps_per_second:.2f}"],
        [names[1], *(f"{new.seconds[c]:.3f}" for c in COMPONENTS), f"{new.steps_per_second:.2f}"],
        ["reduction", *(format_reduction(new.reductions()[c]) for c in COMPONENTS), f"{new.speedup():.2f}x"],
    ]
    title = f"Average time consumption (seconds/{baseline.window_steps} updates)"
    return title + "\n" + _table(header, rows)


def proportion_table(reports: Mapping[str, TimingReport]) -> str:
    header = ["", *(COLUMN_TITLES[c] for c in COMPONENTS)]
    rows = [[name, *(f"{r.proportions[c] * 100:.1f}%" for c in COMPONENTS)] for name, r in reports.items()]
    return _table(header, rows)


def speedup_table(rates: Mapping[str, float]) -> str:
    """End-to-end steps/sec per config and the speedup over the first one"""
    names = list(rates)
    base = rates[names[0]]
    rows = [[name, f"{rate:.2f}", f"{rate / base:.1f}x"] for name, rate in rates.items()]
    return _table(["config", "steps/s", "speedup"], rows)


def write_csv(path: Union[str, Path], reports: Mapping[str, TimingReport]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["config", *COMPONENTS, *(f"{c}_share" for c in COMPONENTS),
                         "backward", "steps_per_second", "audio_seconds_per_second"])
        for name, r in reports.items():
            writer.writerow([name, *(f"{r.seconds[c]:.6f}" for c in COMPONENTS),
                             *(f"{r.proportions[c]:.6f}" for c in COMPONENTS),
                             f"{r.backward_seconds:.6f}", f"{r.steps_per_second:.4f}",
                             f"{r.audio_seconds_per_second:.4f}"])
    return path


def render_proportions_svg(path: Union[str, Path], reports: Mapping[str, TimingReport],
                           title: str = "Forward time by component") -> Path:
    """One horizontal stacked bar per config, segments sized by component share"""
    path = Path(path)
    names = list(reports)
    fig, ax = plt.subplots(figsize=(8, 1.2 + 0.6 * len(names)))
    left = [0.0] * len(names)
    for component, color in zip(COMPONENTS, COLORS):
        shares = [reports[n].proportions[component] * 100 for n in names]
        bars = ax.barh(names, shares, left=left, color=color, label=COLUMN_TITLES[component])
        ax.bar_label(bars, labels=[f"{s:.1f}%" if s >= 5 else "" for s in shares], label_type="center",
                     fontsize=8, color="white")
        left = [l + s for l, s in zip(left, shares)]
    ax.set_xlim(0, 100)
    ax.set_xlabel("share of forward time (%)")
    ax.set_title(title)
    ax.invert_yaxis()
    ax.legend(loc="upper center", bbox_to_anchor=(0.5, -0.35), ncol=len(COMPONENTS), fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    return path


def median_report(reports: Sequence[TimingReport]) -> TimingReport:
    """Component-wise median of repeated measurements"""
    if not reports:
        raise ValueError("no reports to combine")
    seconds = {c: statistics.median(r.seconds[c] for r in reports) for c in COMPONENTS}
    return TimingReport(reports[0].window_steps, seconds,
                        statistics.median(r.backward_seconds for r in reports),
                        statistics.median(r.audio_seconds for r in reports),
                        dict(reports[0].operations))
