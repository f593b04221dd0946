"""Static SVG figures and a Markdown summary for one or more run directories."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import RunData, format_summary, load_run, moving_average, summarize  # noqa: E402

# Fixed hash salt so SVG output is reproducible.
plt.rcParams["svg.hashsalt"] = "ltcr"


def _placeholder(ax, text: str = "no data") -> None:
    ax.text(0.5, 0.5, text, ha="center", va="center", transform=ax.transAxes)
    ax.set_xticks([])
    ax.set_yticks([])


def _condition_curve(runs: Sequence[RunData], cond: str, attr: str = "returns", smooth: bool = True):
    """Mean across (seed, agent) series of one condition, on the shortest common frame grid."""
    series = [(r, s) for r in runs if r.schedule == cond for s in r.series]
    if not series:
        return [], []
    n = min(len(s.frames) for _, s in series)
    if n == 0:
        return [], []
    ys = []
    for r, s in series:
        y = getattr(s, attr)[:n]
        ys.append(moving_average(y, r.window_points) if smooth else y)
    arr = np.array(ys, dtype=float)
    with np.errstate(invalid="ignore"):
        counts = np.sum(~np.isnan(arr), axis=0)
        mean = np.where(counts > 0, np.nansum(arr, axis=0) / np.maximum(counts, 1), np.nan)
    return series[0][1].frames[:n], list(mean)


def render_report(run_dirs: Sequence[str | Path], out_dir: str | Path, threshold: float | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = [load_run(d) for d in run_dirs]
    conditions = sorted({r.schedule for r in runs}, key=lambda c: (c != "baseline", c))

    # per-agent reward curves, one panel per condition
    fig, axes = plt.subplots(max(1, len(conditions)), 1, figsize=(7, 2.8 * max(1, len(conditions))), squeeze=False)
    if not conditions:
        _placeholder(axes[0, 0])
    for ax, cond in zip(axes[:, 0], conditions):
        drawn = False
        for r in runs:
            if r.schedule != cond:
                continue
            for s in r.series:
                ax.plot(s.frames, moving_average(s.returns, r.window_points), lw=0.8, label=f"seed {s.seed} agent {s.agent_id}")
                drawn = True
        if drawn:
            ax.set_title(cond)
            ax.set_xlabel("frame")
            ax.set_ylabel("smoothed eval return")
            ax.legend(fontsize=6)
        else:
            _placeholder(ax)
    fig.tight_layout()
    fig.savefig(out / "rewards.svg")
    plt.close(fig)

    # condition comparison
    fig, ax = plt.subplots(figsize=(7, 3.5))
    drawn = False
    for cond in conditions:
        x, y = _condition_curve(runs, cond)
        if x:
            ax.plot(x, y, label=cond)
            drawn = True
    if drawn:
        ax.set_xlabel("frame")
        ax.set_ylabel("mean smoothed eval return")
        ax.legend()
    else:
        _placeholder(ax)
    fig.tight_layout()
    fig.savefig(out / "comparison.svg")
    plt.close(fig)

    # teammate KL
    fig, ax = plt.subplots(figsize=(7, 3.5))
    drawn = False
    for cond in conditions:
        x, y = _condition_curve(runs, cond, "teammate_kl", smooth=False)
        if x and any(not math.isnan(v) for v in y):
            ax.plot(x, y, label=cond)
            drawn = True
    if drawn:
        ax.set_xlabel("frame")
        ax.set_ylabel("teammate KL")
        ax.legend()
    else:
        _placeholder(ax)
    fig.tight_layout()
    fig.savefig(out / "teammate_kl.svg")
    plt.close(fig)

    skipped = sum(r.skipped_rows for r in runs)
    rows = summarize(runs, threshold)
    body = format_summary(rows) if rows else "no data"
    text = [
        "# Run summary",
        "",
        body,
        "",
        "Figures: rewards.svg, comparison.svg, teammate_kl.svg",
        "",
        f"Corrupt metric rows skipped: {skipped}",
    ]
    (out / "summary.md").write_text("\n".join(text) + "\n")
    return out
