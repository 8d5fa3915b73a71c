import math
from typing import Collection, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


class BarGraph:
    """Per-block impact scores; selected blocks are drawn filled."""

    def __init__(self, title: str = "Block impact", ylabel: str = "PSNR vs all blocks (dB)"):
        self.title = title
        self.ylabel = ylabel

    def draw(
        self,
        values: Sequence[float],
        path: str,
        selected: Optional[Collection[int]] = None,
    ):
        selected = set(selected or ())
        finite = [v for v in values if math.isfinite(v)]
        ceiling = (max(finite) if finite else 1.0) * 1.1 or 1.0
        heights = [v if math.isfinite(v) else ceiling for v in values]
        fig, ax = plt.subplots(figsize=(max(4, len(values) * 0.6), 3))
        for i, height in enumerate(heights):
            ax.bar(
                i,
                height,
                color="tab:blue" if i in selected else "none",
                edgecolor="tab:blue",
                hatch=None if math.isfinite(values[i]) else "//",
            )
        ax.set_xticks(range(len(values)))
        ax.set_xlabel("block")
        ax.set_ylabel(self.ylabel)
        ax.set_title(self.title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        return path
