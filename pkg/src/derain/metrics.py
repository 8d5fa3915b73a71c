import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List

import torch
import torch.nn.functional as F

from derain.errors import DerainError, check_same_shape


class MetricsError(DerainError):
    pass


def json_number(value):
    """JSON has no infinity literal; infinite floats are written as strings."""
    if isinstance(value, float) and math.isinf(value):
        return str(value)
    return value


@dataclass
class MetricsReport:
    psnr_vs_clean: float
    warp_error: float
    rain_residual: float
    per_frame_psnr: List[float] = field(default_factory=list)
    per_pair_warp_error: List[float] = field(default_factory=list)

    def to_json(self) -> str:
        d = {k: json_number(v) for k, v in asdict(self).items()}
        d["per_frame_psnr"] = [json_number(v) for v in self.per_frame_psnr]
        return json.dumps(d, indent=2)

    def to_csv(self) -> str:
        lines = ["metric,frame,value"]
        lines.append(f"psnr_vs_clean,all,{self.psnr_vs_clean}")
        lines.append(f"warp_error,all,{self.warp_error}")
        lines.append(f"rain_residual,all,{self.rain_residual}")
        lines += [f"psnr_vs_clean,{f},{v}" for f, v in enumerate(self.per_frame_psnr)]
        lines += [f"warp_error,{f},{v}" for f, v in enumerate(self.per_pair_warp_error)]
        return "\n".join(lines) + "\n"


def psnr(a: torch.Tensor, b: torch.Tensor, peak: float = 1.0) -> float:
    check_same_shape(a, b, "psnr inputs")
    mse = torch.mean((a.double() - b.double()) ** 2).item()
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def per_frame_psnr(a: torch.Tensor, b: torch.Tensor, peak: float = 1.0) -> List[float]:
    check_same_shape(a, b, "psnr inputs")
    return [psnr(fa, fb, peak) for fa, fb in zip(a, b)]


def warp(frame: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample frame (C, H, W) at x + flow(x); flow is (2, H, W) in pixels."""
    _, h, w = frame.shape
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=frame.dtype), torch.arange(w, dtype=frame.dtype), indexing="ij"
    )
    gx = 2.0 * (xs + flow[0]) / max(w - 1, 1) - 1.0
    gy = 2.0 * (ys + flow[1]) / max(h - 1, 1) - 1.0
    grid = torch.stack([gx, gy], dim=-1).unsqueeze(0)
    return F.grid_sample(
        frame.unsqueeze(0), grid, mode="bilinear", padding_mode="border", align_corners=True
    )[0]


def interior_border(flow: torch.Tensor) -> int:
    return math.ceil(flow.abs().max().item()) if flow.numel() else 0


def warp_errors(video: torch.Tensor, flow: torch.Tensor) -> List[float]:
    frames, _, h, w = video.shape
    if frames < 2:
        raise MetricsError(f"warp error needs at least two frames, got {frames}")
    if tuple(flow.shape) != (frames - 1, 2, h, w):
        raise MetricsError(
            f"flow shape {tuple(flow.shape)} does not match video {tuple(video.shape)}"
        )
    border = interior_border(flow)
    if 2 * border >= min(h, w):
        raise MetricsError(f"flow magnitude {border} leaves no interior in {h}x{w} frames")
    errors = []
    for f in range(frames - 1):
        warped = warp(video[f + 1].double(), flow[f].double())
        diff = (video[f].double() - warped).abs()
        diff = diff[:, border : h - border, border : w - border]
        errors.append(diff.mean().item())
    return errors


def warp_error(video: torch.Tensor, flow: torch.Tensor) -> float:
    errors = warp_errors(video, flow)
    return sum(errors) / len(errors)


def rain_residual(output: torch.Tensor, clean: torch.Tensor, rain_mask: torch.Tensor) -> float:
    check_same_shape(output, clean, "output and clean")
    mask = (rain_mask > 0).expand_as(output)
    if not bool(mask.any()):
        logging.warning("Rain mask is empty, rain residual defined as 0")
        return 0.0
    sq = (output.double() - clean.double()) ** 2
    return sq[mask].mean().item()


def evaluate(
    output: torch.Tensor,
    clean: torch.Tensor,
    flow: torch.Tensor,
    rain_mask: torch.Tensor,
) -> MetricsReport:
    pairs = warp_errors(output, flow)
    return MetricsReport(
        psnr_vs_clean=psnr(output, clean),
        warp_error=sum(pairs) / len(pairs),
        rain_residual=rain_residual(output, clean, rain_mask),
        per_frame_psnr=per_frame_psnr(output, clean),
        per_pair_warp_error=pairs,
    )
