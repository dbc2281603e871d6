"""Static SVG histograms of inconclusive percentages."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no timestamp so that reruns write identical files
matplotlib.rcParams["svg.hashsalt"] = "bbr"


def inconclusive_histogram(
    panels: Mapping[str, Sequence[float]], path: str | Path, what: str = "examiner"
) -> None:
    """One histogram per panel of inconclusive percentages (0-100)."""
    n = max(1, len(panels))
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 3), sharey=False, squeeze=False)
    bins = [k * 5 for k in range(21)]
    for ax, (label, props) in zip(axes[0], panels.items()):
        ax.hist([100 * p for p in props], bins=bins, color="#4c72b0", edgecolor="white")
        ax.set_title(label)
        ax.set_xlabel(f"% inconclusive per {what}")
        ax.set_xlim(0, 100)
    axes[0][0].set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
