import json
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import torch

from derain.attention_control import AttentionControl, block_preset
from derain.denoiser import ToyDenoiser, from_latent, to_latent
from derain.guidance import GuidanceSpec, build_negative_condition
from derain.inversion import (
    InversionError,
    InversionRecord,
    ddim_invert,
    ddpm_invert,
    reconstruct,
    reconstruct_ddim,
)
from derain.metrics import evaluate
from derain.schedule import NoiseSchedule
from derain.synthetic_rain import SceneBundle


@dataclass(frozen=True)
class DerainSettings:
    lambda_: float = 15.0
    t_skip: int = 40
    prompt_mode: str = "contextual"
    concept: str = "light rain"
    attn_switch: bool = True
    blocks: Optional[Tuple[int, ...]] = None
    blocks_initial: Optional[Tuple[int, ...]] = None
    invert_with: str = "null"
    inversion: str = "ddpm"
    seed: int = 0


@dataclass
class DerainResult:
    output: torch.Tensor  # pixel space, [0, 1]
    reconstruction: Optional[torch.Tensor] = None
    record: Optional[InversionRecord] = None


def make_control(model: ToyDenoiser, settings: DerainSettings) -> Optional[AttentionControl]:
    if not settings.attn_switch:
        return None
    return AttentionControl.for_model(model, settings.blocks, settings.blocks_initial)


def derain(
    rainy: torch.Tensor,
    model: ToyDenoiser,
    s: NoiseSchedule,
    settings: DerainSettings,
    corpus: Optional[Sequence[str]] = None,
    with_reconstruction: bool = False,
) -> DerainResult:
    """Invert the rainy video, then reconstruct it guided away from the rain concept."""
    x0 = to_latent(rainy)
    null = model.null_condition()
    negative = build_negative_condition(settings.prompt_mode, settings.concept, model, corpus)
    implicit = settings.prompt_mode == "implicit"
    invert_cond = negative if implicit or settings.invert_with == "concept" else null
    guidance = None
    if not implicit:
        guidance = GuidanceSpec(
            lambda_=settings.lambda_,
            t_skip=settings.t_skip,
            negative_condition=negative,
            null_condition=null,
            steps=s.num_steps,
        )
    control = make_control(model, settings)
    record = None
    match settings.inversion:
        case "ddpm":
            record = ddpm_invert(x0, invert_cond, model, s, settings.seed)
            output = reconstruct(record, null, model, s, guidance, control)
            pure = reconstruct(record, null, model, s) if with_reconstruction else None
        case "ddim":
            trajectory = ddim_invert(x0, invert_cond, model, s)
            top = s.num_steps - 1
            output = reconstruct_ddim(trajectory[-1], top, null, model, s, guidance, control)
            pure = (
                reconstruct_ddim(trajectory[-1], top, null, model, s)
                if with_reconstruction
                else None
            )
        case other:
            raise InversionError(f"Inversion method {other} not defined for deraining.")
    logging.info(
        f"Derained with {settings.prompt_mode} prompt '{negative.prompt()}', "
        f"lambda {settings.lambda_}, t_skip {settings.t_skip}, switch {settings.attn_switch}"
    )
    return DerainResult(
        output=from_latent(output).clamp(0.0, 1.0),
        reconstruction=None if pure is None else from_latent(pure).clamp(0.0, 1.0),
        record=record,
    )


@dataclass
class AblationRow:
    group: str
    variant: str
    rain_residual: float
    psnr: float
    warp_error: float


@dataclass
class AblationTable:
    rows: List[AblationRow] = field(default_factory=list)

    def row(self, group: str, variant: str) -> AblationRow:
        return next(r for r in self.rows if r.group == group and r.variant == variant)

    def to_csv(self) -> str:
        lines = ["group,variant,rain_residual,psnr,warp_error"]
        lines += [
            f"{r.group},{r.variant},{r.rain_residual},{r.psnr},{r.warp_error}"
            for r in self.rows
        ]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps([r.__dict__ for r in self.rows], indent=2)


def ablation_variants(
    model: ToyDenoiser, base: DerainSettings, steps: int, lambda_plain: Optional[float] = None
) -> List[Tuple[str, str, DerainSettings]]:
    """(group, variant, settings) rows; lambda_plain is the scale used without switching."""
    plain = base.lambda_ if lambda_plain is None else lambda_plain
    variants = [
        ("inversion", "ddpm", base),
        ("inversion", "ddim", replace(base, inversion="ddim", t_skip=round(0.7 * steps))),
    ]
    variants += [
        ("prompt", mode, replace(base, prompt_mode=mode))
        for mode in ("implicit", "simple", "mean", "contextual")
    ]
    variants += [
        ("attn_switch", "off", replace(base, attn_switch=False, lambda_=plain)),
        ("attn_switch", "on", replace(base, attn_switch=True)),
    ]
    for preset in ("none", "initial", "later", "both"):
        blocks, initial = block_preset(preset, model.config.num_blocks)
        variants.append(
            (
                "blocks",
                preset,
                replace(
                    base,
                    attn_switch=True,
                    blocks=tuple(sorted(blocks)),
                    blocks_initial=tuple(sorted(initial)),
                ),
            )
        )
    return variants


def ablate(
    model: ToyDenoiser,
    bundles: Sequence[SceneBundle],
    s: NoiseSchedule,
    base: DerainSettings,
    corpus: Sequence[str],
    lambda_plain: Optional[float] = None,
) -> AblationTable:
    if not bundles:
        raise InversionError("ablation needs at least one scene")
    table = AblationTable()
    for group, variant, settings in ablation_variants(model, base, s.num_steps, lambda_plain):
        reports = [
            evaluate(
                derain(b.rainy, model, s, settings, corpus).output,
                b.clean,
                b.flow,
                b.rain_mask,
            )
            for b in bundles
        ]
        n = len(reports)
        table.rows.append(
            AblationRow(
                group=group,
                variant=variant,
                rain_residual=sum(r.rain_residual for r in reports) / n,
                psnr=sum(r.psnr_vs_clean for r in reports) / n,
                warp_error=sum(r.warp_error for r in reports) / n,
            )
        )
        logging.info(f"Ablation {group}/{variant}: {table.rows[-1]}")
    return table
