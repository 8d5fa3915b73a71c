import copy
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from tqdm import tqdm

from derain.denoiser import DenoiserConfig, TextCondition, ToyDenoiser, save_checkpoint, to_latent
from derain.errors import DerainError
from derain.schedule import NoiseSchedule
from derain.synthetic_rain import SceneBundle


class TrainingError(DerainError):
    pass


@dataclass
class TrainResult:
    model: ToyDenoiser
    losses: List[float] = field(default_factory=list)
    ema_losses: List[float] = field(default_factory=list)

    @property
    def start_ema(self) -> float:
        return self.ema_losses[0] if self.ema_losses else math.nan

    @property
    def final_ema(self) -> float:
        return self.ema_losses[-1] if self.ema_losses else math.nan


def training_pairs(dataset: Sequence[SceneBundle]) -> Tuple[torch.Tensor, List[str]]:
    """Every bundle contributes its clean video captioned "scene" and its rainy video."""
    if not dataset:
        raise TrainingError("empty dataset")
    videos, captions = [], []
    for bundle in dataset:
        videos += [to_latent(bundle.clean), to_latent(bundle.rainy)]
        captions += ["scene", bundle.caption]
    return torch.stack(videos), captions


def caption_corpus(dataset: Sequence[SceneBundle]) -> List[str]:
    return training_pairs(dataset)[1]


def alpha_bar_table(s: NoiseSchedule, t: torch.Tensor) -> torch.Tensor:
    return s.alpha_bars[t].to(torch.float32).reshape(-1, 1, 1, 1, 1)


def denoising_loss(
    model: ToyDenoiser,
    x0: torch.Tensor,
    t: torch.Tensor,
    noise: torch.Tensor,
    conds: Sequence[TextCondition],
    s: NoiseSchedule,
) -> torch.Tensor:
    a = alpha_bar_table(s, t).to(x0.dtype)
    x_t = a.sqrt() * x0 + (1.0 - a).sqrt() * noise
    return F.mse_loss(model(x_t, t, conds), noise)


def sample_batch(
    videos: torch.Tensor,
    captions: Sequence[str],
    model: ToyDenoiser,
    s: NoiseSchedule,
    batch_size: int,
    p_drop: float,
    generator: torch.Generator,
):
    idx = torch.randint(0, videos.shape[0], (batch_size,), generator=generator)
    t = torch.randint(0, s.num_steps, (batch_size,), generator=generator)
    noise = torch.randn((batch_size,) + tuple(videos.shape[1:]), generator=generator)
    drop = torch.rand(batch_size, generator=generator) < p_drop
    null = model.null_condition()
    conds = [
        null if dropped else model.condition(captions[i])
        for i, dropped in zip(idx.tolist(), drop.tolist())
    ]
    return videos[idx], t, noise, conds


def train_toy(
    dataset: Sequence[SceneBundle],
    steps: int,
    seed: int,
    s: NoiseSchedule,
    config: Optional[DenoiserConfig] = None,
    batch_size: int = 16,
    learning_rate: float = 1e-3,
    p_drop: float = 0.1,
    ema_decay: float = 0.99,
    checkpoint_path: Optional[str] = None,
) -> TrainResult:
    videos, captions = training_pairs(dataset)
    model = ToyDenoiser(config or DenoiserConfig(), seed=seed)
    model.corpus = caption_corpus(dataset)
    generator = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=learning_rate)
    result = TrainResult(model=model)
    ema = None
    model.train()
    for step in tqdm(range(steps), desc="train", disable=steps == 0):
        x0, t, noise, conds = sample_batch(
            videos, captions, model, s, batch_size, p_drop, generator
        )
        loss = denoising_loss(model, x0, t, noise, conds, s)
        if not torch.isfinite(loss):
            raise TrainingError(
                f"non-finite loss {loss.item()} at step {step} (t={t.tolist()})"
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        value = loss.item()
        ema = value if ema is None else ema_decay * ema + (1.0 - ema_decay) * value
        result.losses.append(value)
        result.ema_losses.append(ema)
        if step % 500 == 0:
            logging.info(f"step {step}: loss {value:.5f}, ema {ema:.5f}")
    model.eval()
    if steps:
        logging.info(f"Training done: ema loss {result.start_ema:.5f} -> {result.final_ema:.5f}")
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return result


def heldout_loss(
    model: ToyDenoiser, dataset: Sequence[SceneBundle], s: NoiseSchedule, seed: int, batches: int = 4
) -> float:
    videos, captions = training_pairs(dataset)
    generator = torch.Generator().manual_seed(seed)
    total = 0.0
    with torch.no_grad():
        for _ in range(batches):
            batch = sample_batch(videos, captions, model, s, 16, 0.0, generator)
            total += denoising_loss(model, *batch, s).item()
    return total / batches


def gradient_check(
    model: ToyDenoiser,
    x0: torch.Tensor,
    t: torch.Tensor,
    noise: torch.Tensor,
    conds: Sequence[TextCondition],
    s: NoiseSchedule,
    n_checks: int = 8,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between autograd and central differences, in float64."""
    model = copy.deepcopy(model).double()
    x0, noise = x0.double(), noise.double()
    model.zero_grad()
    denoising_loss(model, x0, t, noise, conds, s).backward()
    params = [p for p in model.parameters() if p.requires_grad]
    generator = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(n_checks):
        p = params[int(torch.randint(0, len(params), (1,), generator=generator))]
        flat = p.data.view(-1)
        i = int(torch.randint(0, flat.numel(), (1,), generator=generator))
        analytic = p.grad.view(-1)[i].item()
        original = flat[i].item()
        with torch.no_grad():
            flat[i] = original + h
            plus = denoising_loss(model, x0, t, noise, conds, s).item()
            flat[i] = original - h
            minus = denoising_loss(model, x0, t, noise, conds, s).item()
            flat[i] = original
        numeric = (plus - minus) / (2 * h)
        scale = max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic - numeric) / scale)
    return worst
