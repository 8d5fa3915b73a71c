import math
from dataclasses import dataclass

import torch

from derain.errors import DerainError, check_same_shape


class ScheduleError(DerainError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta/alpha tables indexed by step i = 0..T-1.

    Level i noises clean data with alpha_bars[i]; the denoising step at index i
    maps x_i to x_{i-1}, where x_{-1} is the clean latent (alpha_bar = 1).
    """

    num_steps: int
    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor
    posterior_sigmas: torch.Tensor
    kind: str = "custom"

    @property
    def schedule_id(self) -> str:
        return (
            f"{self.kind}-{self.num_steps}-"
            f"{self.betas[0].item():.6g}-{self.betas[-1].item():.6g}"
        )

    @classmethod
    def from_betas(cls, betas, kind: str = "custom") -> "NoiseSchedule":
        betas = torch.as_tensor(betas, dtype=torch.float64).flatten()
        if betas.numel() < 2:
            raise ScheduleError(f"need at least 2 steps, got {betas.numel()}")
        if not bool(((betas > 0) & (betas < 1)).all()):
            raise ScheduleError("betas must lie in the open interval (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = torch.cumprod(alphas, dim=0)
        alpha_bars_prev = torch.cat([torch.ones(1, dtype=torch.float64), alpha_bars[:-1]])
        variances = betas * (1.0 - alpha_bars_prev) / (1.0 - alpha_bars)
        # the last denoising step is deterministic
        variances[0] = 0.0
        return cls(
            num_steps=betas.numel(),
            betas=betas,
            alphas=alphas,
            alpha_bars=alpha_bars,
            posterior_sigmas=variances.clamp(min=0.0).sqrt(),
            kind=kind,
        )

    def check_step(self, t: int):
        if not 0 <= t < self.num_steps:
            raise ScheduleError(f"step {t} outside [0, {self.num_steps})")

    def alpha_bar_at(self, t: int) -> float:
        if t == -1:
            return 1.0
        self.check_step(t)
        return self.alpha_bars[t].item()

    def sigma_at(self, t: int) -> float:
        self.check_step(t)
        return self.posterior_sigmas[t].item()


def build_schedule(
    T: int, beta_start: float = 1e-4, beta_end: float = 0.02, kind: str = "linear"
) -> NoiseSchedule:
    if T < 2:
        raise ScheduleError(f"T must be at least 2, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    match kind:
        case "linear":
            betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
        case "cosine":
            betas = _cosine_betas(T)
        case other:
            raise ScheduleError(f"Schedule kind {other} not defined.")
    return NoiseSchedule.from_betas(betas, kind=kind)


def _cosine_betas(T: int, s: float = 0.008, max_beta: float = 0.999) -> torch.Tensor:
    def f(u):
        return math.cos((u + s) / (1 + s) * math.pi / 2) ** 2

    betas = [min(1 - f((i + 1) / T) / f(i / T), max_beta) for i in range(T)]
    return torch.tensor(betas, dtype=torch.float64)


def forward_noise(x0, t: int, eps, s: NoiseSchedule):
    check_same_shape(x0, eps, "x0 and eps")
    a = s.alpha_bar_at(t)
    return math.sqrt(a) * x0 + math.sqrt(1.0 - a) * eps


def predict_x0(x_t, eps_hat, t: int, s: NoiseSchedule):
    a = s.alpha_bar_at(t)
    return (x_t - math.sqrt(1.0 - a) * eps_hat) / math.sqrt(a)


def ddpm_mu(x_t, eps_hat, t: int, s: NoiseSchedule):
    check_same_shape(x_t, eps_hat, "x_t and eps_hat")
    s.check_step(t)
    a, a_prev = s.alpha_bar_at(t), s.alpha_bar_at(t - 1)
    beta = s.betas[t].item()
    alpha = s.alphas[t].item()
    x0_hat = predict_x0(x_t, eps_hat, t, s)
    coef_x0 = math.sqrt(a_prev) * beta / (1.0 - a)
    coef_xt = math.sqrt(alpha) * (1.0 - a_prev) / (1.0 - a)
    return coef_x0 * x0_hat + coef_xt * x_t


def ddpm_step(x_t, eps_hat, t: int, z, s: NoiseSchedule):
    check_same_shape(x_t, z, "x_t and z")
    mu = ddpm_mu(x_t, eps_hat, t, s)
    sigma = s.sigma_at(t)
    if sigma == 0.0:
        return mu
    return mu + sigma * z


def ddpm_sample_step(x_t, eps_hat, t: int, s: NoiseSchedule, generator=None):
    z = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype)
    return ddpm_step(x_t, eps_hat, t, z, s)


def ddim_step(x_t, eps_hat, t: int, s: NoiseSchedule):
    check_same_shape(x_t, eps_hat, "x_t and eps_hat")
    a_prev = s.alpha_bar_at(t - 1)
    x0_hat = predict_x0(x_t, eps_hat, t, s)
    return math.sqrt(a_prev) * x0_hat + math.sqrt(1.0 - a_prev) * eps_hat


def ddim_invert_step(x_prev, eps_hat, t: int, s: NoiseSchedule):
    check_same_shape(x_prev, eps_hat, "x_prev and eps_hat")
    a = s.alpha_bar_at(t)
    a_prev = s.alpha_bar_at(t - 1)
    x0_hat = (x_prev - math.sqrt(1.0 - a_prev) * eps_hat) / math.sqrt(a_prev)
    return math.sqrt(a) * x0_hat + math.sqrt(1.0 - a) * eps_hat
