import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch


def draw_attention_maps(maps: torch.Tensor, path: str, title: str = "attention") -> str:
    """One heat map per block from a (num_blocks, h, w) tensor."""
    n = maps.shape[0]
    fig, axes = plt.subplots(1, n, figsize=(1.6 * n, 2))
    for b, ax in enumerate(axes if n > 1 else [axes]):
        ax.imshow(maps[b].numpy(), cmap="viridis")
        ax.set_title(f"block {b}", fontsize=8)
        ax.axis("off")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
