import logging
from dataclasses import dataclass
from typing import List, Optional

import torch
from tqdm import tqdm

from derain.denoiser import TextCondition
from derain.errors import DerainError
from derain.guidance import GuidanceSpec, dual_pass
from derain.schedule import (
    NoiseSchedule,
    ddim_invert_step,
    ddim_step,
    ddpm_mu,
    ddpm_sample_step,
    ddpm_step,
    forward_noise,
)
from derain.utils.container import read_container, write_container

METHODS = ("sdedit", "ddim", "ddpm")


class InversionError(DerainError):
    pass


@dataclass(eq=False)
class InversionRecord:
    """Output of DDPM inversion.

    noise_maps[i] is z_i for the step x_i -> x_{i-1}; noise_maps[0] is zero
    because the last step is deterministic, and final_residual carries what
    that step cannot express. latents[i + 1] holds the x_i that replaying the
    record produces, latents[0] the replayed output.
    """

    x_T: torch.Tensor
    noise_maps: torch.Tensor
    final_residual: torch.Tensor
    condition_used: TextCondition
    schedule_id: str
    latents: Optional[torch.Tensor] = None

    @property
    def top_step(self) -> int:
        return self.noise_maps.shape[0] - 1

    def latent_at(self, step: int) -> torch.Tensor:
        if self.latents is None:
            raise InversionError("record does not retain intermediate latents")
        return self.latents[step + 1]


def _check_video(x0: torch.Tensor):
    if x0.dim() != 4 or x0.numel() == 0:
        raise InversionError(f"expected a nonempty (F, C, H, W) video, got {tuple(x0.shape)}")


def _top_step(s: NoiseSchedule, skip: int) -> int:
    if not 0 <= skip < s.num_steps:
        raise InversionError(f"skip {skip} outside [0, {s.num_steps})")
    return s.num_steps - 1 - skip


def sdedit_invert(x0: torch.Tensor, t_start: int, s: NoiseSchedule, seed: int) -> torch.Tensor:
    if not -1 <= t_start < s.num_steps:
        raise InversionError(f"t_start {t_start} outside [-1, {s.num_steps})")
    generator = torch.Generator().manual_seed(seed)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    return forward_noise(x0, t_start, eps, s)


def sdedit_reconstruct(
    x_t: torch.Tensor, t_start: int, cond: TextCondition, model, s: NoiseSchedule, seed: int
) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed + 1)
    x = x_t
    for t in range(t_start, -1, -1):
        x = ddpm_sample_step(x, model.predict_eps(x, t, cond), t, s, generator)
    return x


def ddim_invert(
    x0: torch.Tensor, cond: TextCondition, model, s: NoiseSchedule, skip: int = 0
) -> List[torch.Tensor]:
    """Deterministic trajectory [x0, x_0, ..., x_top]; eps is evaluated at the less noisy latent."""
    _check_video(x0)
    top = _top_step(s, skip)
    trajectory = [x0]
    for t in range(top + 1):
        x_prev = trajectory[-1]
        trajectory.append(ddim_invert_step(x_prev, model.predict_eps(x_prev, t, cond), t, s))
    return trajectory


def reconstruct_ddim(
    x_T: torch.Tensor,
    top: int,
    cond: TextCondition,
    model,
    s: NoiseSchedule,
    guidance: Optional[GuidanceSpec] = None,
    control=None,
) -> torch.Tensor:
    x = x_T
    for t in range(top, -1, -1):
        if guidance is None or guidance.in_skip_window(t):
            eps = model.predict_eps(x, t, cond)
        else:
            eps = dual_pass(x, t, guidance, model, control)
        x = ddim_step(x, eps, t, s)
    return x


def ddpm_invert(
    x0: torch.Tensor,
    cond: TextCondition,
    model,
    s: NoiseSchedule,
    seed: int,
    skip: int = 0,
    retain_latents: bool = True,
) -> InversionRecord:
    _check_video(x0)
    top = _top_step(s, skip)
    generator = torch.Generator().manual_seed(seed)
    # independent noisy latents per level; xs[i + 1] is x_i
    xs = [x0] + [
        forward_noise(x0, t, torch.randn(x0.shape, generator=generator, dtype=x0.dtype), s)
        for t in range(top + 1)
    ]
    noise_maps = torch.zeros((top + 1,) + tuple(x0.shape), dtype=x0.dtype)
    final_residual = torch.zeros_like(x0)
    for t in tqdm(range(top, -1, -1), desc="ddpm inversion", leave=False):
        x_t = xs[t + 1]
        eps = model.predict_eps(x_t, t, cond)
        mu = ddpm_mu(x_t, eps, t, s)
        sigma = s.sigma_at(t)
        if t == 0:
            final_residual = x0 - mu
            xs[0] = mu + final_residual
            continue
        if sigma == 0.0:
            raise InversionError(f"sigma is zero at non-final step {t}")
        z = (xs[t] - mu) / sigma
        noise_maps[t] = z
        # keep the trajectory the replay will produce
        xs[t] = ddpm_step(x_t, eps, t, z, s)
    logging.info(f"DDPM inversion of {top + 1} steps with seed {seed}")
    return InversionRecord(
        x_T=xs[top + 1],
        noise_maps=noise_maps,
        final_residual=final_residual,
        condition_used=cond,
        schedule_id=s.schedule_id,
        latents=torch.stack(xs) if retain_latents else None,
    )


def reconstruct(
    record: InversionRecord,
    cond: TextCondition,
    model,
    s: NoiseSchedule,
    guidance: Optional[GuidanceSpec] = None,
    control=None,
) -> torch.Tensor:
    if record.schedule_id != s.schedule_id:
        raise InversionError(
            f"record built with schedule {record.schedule_id}, got {s.schedule_id}"
        )
    top = record.top_step
    if top >= s.num_steps:
        raise InversionError(f"record has {top + 1} noise maps for {s.num_steps} steps")
    if guidance is not None and guidance.steps != s.num_steps:
        raise InversionError(f"guidance steps {guidance.steps} != schedule steps {s.num_steps}")
    x = record.x_T
    start = top
    if (
        guidance is not None
        and record.latents is not None
        and cond.same_as(record.condition_used)
        and cond.same_as(guidance.null_condition)
    ):
        # the skip window replays the inversion trajectory exactly
        while start >= 0 and guidance.in_skip_window(start):
            start -= 1
        if start < 0:
            return record.latents[0].clone()
        x = record.latent_at(start)
    for t in range(start, -1, -1):
        if guidance is None or guidance.in_skip_window(t):
            eps = model.predict_eps(x, t, cond)
        else:
            eps = dual_pass(x, t, guidance, model, control)
        x = ddpm_step(x, eps, t, record.noise_maps[t], s)
    return x + record.final_residual


def save_record(record: InversionRecord, path: str):
    tensors = {
        "x_T": record.x_T,
        "noise_maps": record.noise_maps,
        "final_residual": record.final_residual,
    }
    if record.latents is not None:
        tensors["latents"] = record.latents
    header = {
        "condition": record.condition_used.to_dict(),
        "schedule_id": record.schedule_id,
    }
    write_container(path, tensors, header)
    logging.info(f"Wrote inversion record {path}")


def load_record(path: str) -> InversionRecord:
    tensors, header = read_container(path)
    if header is None:
        raise InversionError(f"record {path} has no header")
    return InversionRecord(
        x_T=tensors["x_T"],
        noise_maps=tensors["noise_maps"],
        final_residual=tensors["final_residual"],
        condition_used=TextCondition.from_dict(header["condition"]),
        schedule_id=header["schedule_id"],
        latents=tensors.get("latents"),
    )


def invert_and_reconstruct(
    method: str,
    x0: torch.Tensor,
    cond: TextCondition,
    model,
    s: NoiseSchedule,
    skip: int = 0,
    seed: int = 0,
) -> torch.Tensor:
    """Round trip through one inversion method, starting reconstruction at level T-1-skip."""
    match method:
        case "sdedit":
            top = _top_step(s, skip)
            return sdedit_reconstruct(sdedit_invert(x0, top, s, seed), top, cond, model, s, seed)
        case "ddim":
            trajectory = ddim_invert(x0, cond, model, s, skip)
            return reconstruct_ddim(trajectory[-1], len(trajectory) - 2, cond, model, s)
        case "ddpm":
            return reconstruct(ddpm_invert(x0, cond, model, s, seed, skip), cond, model, s)
        case other:
            raise InversionError(f"Inversion method {other} not defined.")
