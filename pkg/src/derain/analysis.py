import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import torch
import torch.nn.functional as F

from derain.denoiser import TextCondition, ToyDenoiser, from_latent, generate
from derain.inversion import METHODS, InversionError, invert_and_reconstruct
from derain.metrics import psnr
from derain.schedule import NoiseSchedule


def oriented_kernel(angle: float, size: int = 5) -> torch.Tensor:
    """Second derivative across a line at `angle` degrees from vertical, averaged along it."""
    theta = math.radians(angle)
    along = (math.sin(theta), math.cos(theta))  # (x, y)
    across = (math.cos(theta), -math.sin(theta))
    kernel = torch.zeros(size, size, dtype=torch.float64)
    c = size // 2
    for u in range(-c, c + 1):
        for v, weight in ((-1, -1.0), (0, 2.0), (1, -1.0)):
            x = round(c + u * along[0] + v * across[0])
            y = round(c + u * along[1] + v * across[1])
            if 0 <= x < size and 0 <= y < size:
                kernel[y, x] += weight / size
    return kernel - kernel.mean()


def _filter_energy(video: torch.Tensor, kernel: torch.Tensor) -> float:
    luminance = video.double().mean(dim=1, keepdim=True)
    pad = kernel.shape[-1] // 2
    response = F.conv2d(
        F.pad(luminance, (pad, pad, pad, pad), mode="replicate"), kernel[None, None]
    )
    return torch.mean(response**2).item()


def rain_band_energy(video: torch.Tensor, angle: float = 0.0) -> float:
    return _filter_energy(video, oriented_kernel(angle))


def background_energy(video: torch.Tensor, angle: float = 0.0) -> float:
    return _filter_energy(video, oriented_kernel(angle + 90.0))


@dataclass
class ProbeReport:
    prompt: str
    rain_energy: float
    background_energy: float
    per_seed_rain: List[float] = field(default_factory=list)
    per_seed_background: List[float] = field(default_factory=list)


def prompt_probe(
    model: ToyDenoiser,
    condition: TextCondition,
    seeds: Sequence[int],
    s: NoiseSchedule,
    angle: float = 0.0,
) -> ProbeReport:
    rain, background = [], []
    for seed in seeds:
        sample = generate(model, s, seed, lambda x, t: model.predict_eps(x, t, condition))
        video = from_latent(sample).clamp(0.0, 1.0)
        rain.append(rain_band_energy(video, angle))
        background.append(background_energy(video, angle))
    report = ProbeReport(
        prompt=condition.prompt(),
        rain_energy=sum(rain) / len(rain),
        background_energy=sum(background) / len(background),
        per_seed_rain=rain,
        per_seed_background=background,
    )
    logging.info(
        f"Probe '{report.prompt}': rain {report.rain_energy:.6f}, "
        f"background {report.background_energy:.6f}"
    )
    return report


@dataclass
class SweepTable:
    skips: List[int]
    methods: List[str]
    psnr: Dict[Tuple[str, int], float] = field(default_factory=dict)

    def series(self, method: str) -> List[float]:
        return [self.psnr[(method, skip)] for skip in self.skips]

    def to_csv(self) -> str:
        lines = ["method,t_skip,psnr"]
        lines += [f"{m},{k},{self.psnr[(m, k)]}" for m in self.methods for k in self.skips]
        return "\n".join(lines) + "\n"


def inversion_sweep(
    model: ToyDenoiser,
    videos: Sequence[torch.Tensor],
    skips: Sequence[int],
    s: NoiseSchedule,
    methods: Sequence[str] = METHODS,
    seed: int = 0,
) -> SweepTable:
    """Mean reconstruction PSNR per (method, skip); videos are latents in [-1, 1]."""
    for method in methods:
        if method not in METHODS:
            raise InversionError(f"Inversion method {method} not defined.")
    null = model.null_condition()
    table = SweepTable(skips=list(skips), methods=list(methods))
    for method in methods:
        for skip in skips:
            scores = [
                psnr(
                    invert_and_reconstruct(method, video, null, model, s, skip, seed + i),
                    video,
                    peak=2.0,
                )
                for i, video in enumerate(videos)
            ]
            table.psnr[(method, skip)] = sum(scores) / len(scores)
            logging.info(f"{method} t_s={skip}: {table.psnr[(method, skip)]:.3f} dB")
    return table
