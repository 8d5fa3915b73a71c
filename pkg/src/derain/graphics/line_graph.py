from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


class LineGraph:
    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel

    def draw(self, x: Sequence[float], series: Dict[str, Sequence[float]], path: str):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for label, values in series.items():
            ax.plot(list(x), list(values), marker="o", label=label)
        ax.set_xlabel(self.xlabel)
        ax.set_ylabel(self.ylabel)
        ax.set_title(self.title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        return path
