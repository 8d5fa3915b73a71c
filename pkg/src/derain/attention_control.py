import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import torch

from derain.denoiser import HiddenState, JointBlock, TextCondition, ToyDenoiser, generate
from derain.errors import DerainError
from derain.metrics import psnr
from derain.schedule import NoiseSchedule


class AttentionControlError(DerainError):
    pass


class ControlMode(Enum):
    OFF = "off"
    CAPTURE = "capture"
    SWITCH = "switch"


def default_block_sets(num_blocks: int) -> Tuple[FrozenSet[int], FrozenSet[int]]:
    """First sixth of the blocks plus the later half; the first sixth is B_initial."""
    initial = frozenset(range(max(1, round(num_blocks / 6))))
    later = frozenset(range(num_blocks - num_blocks // 2, num_blocks))
    return initial | later, initial


def block_preset(name: str, num_blocks: int) -> Tuple[FrozenSet[int], FrozenSet[int]]:
    both, initial = default_block_sets(num_blocks)
    match name:
        case "none":
            return frozenset(), frozenset()
        case "initial":
            return initial, initial
        case "later":
            return both - initial, frozenset()
        case "both":
            return both, initial
        case other:
            raise AttentionControlError(f"Block preset {other} not defined.")


class AttentionControl:
    """Per-run controller threaded through the denoiser blocks.

    In capture mode the text features entering every block of B are stored per
    (block, step). In switch mode blocks of B read those features back and use
    them for the text part of K and V; blocks of B_initial additionally keep
    the conditional text stream by running the block twice.
    """

    def __init__(
        self,
        blocks: Iterable[int] = (),
        initial_blocks: Iterable[int] = (),
        mode: ControlMode = ControlMode.OFF,
    ):
        self.block_set = frozenset(blocks)
        self.initial_set = frozenset(initial_blocks)
        if not self.initial_set <= self.block_set:
            raise AttentionControlError(
                f"initial blocks {sorted(self.initial_set)} not contained in {sorted(self.block_set)}"
            )
        self.mode = mode
        self.null_text_buffer: Dict[Tuple[int, int], torch.Tensor] = {}
        self.attention_evaluations = 0

    @classmethod
    def for_model(cls, model: ToyDenoiser, blocks=None, initial_blocks=None):
        default, default_initial = default_block_sets(model.config.num_blocks)
        control = cls(
            default if blocks is None else blocks,
            default_initial if initial_blocks is None else initial_blocks,
        )
        control.check_blocks(model.config.num_blocks)
        return control

    def check_blocks(self, num_blocks: int):
        bad = [b for b in self.block_set if not 0 <= b < num_blocks]
        if bad:
            raise AttentionControlError(f"blocks {sorted(bad)} outside [0, {num_blocks})")

    def clear(self):
        self.null_text_buffer.clear()

    def capture_null_text(self, block_index: int, h_text: torch.Tensor, t: int):
        if self.mode is not ControlMode.CAPTURE:
            raise AttentionControlError(f"capture requested in {self.mode.value} mode")
        self.null_text_buffer[(block_index, t)] = h_text.detach().clone()

    def null_text(self, block_index: int, t: int) -> torch.Tensor:
        try:
            return self.null_text_buffer[(block_index, t)]
        except KeyError:
            raise AttentionControlError(
                f"no null text features buffered for block {block_index} at step {t}"
            ) from None

    def switched_kv(
        self,
        block_index: int,
        h_text_cond: torch.Tensor,
        h_img_cond: torch.Tensor,
        params: JointBlock,
        t: int,
        temb: torch.Tensor,
    ):
        if self.mode is not ControlMode.SWITCH:
            raise AttentionControlError(f"switched K/V requested in {self.mode.value} mode")
        if block_index not in self.block_set:
            raise AttentionControlError(f"block {block_index} is not a switching block")
        h_text_null = self.null_text(block_index, t)
        if h_text_null.shape != h_text_cond.shape:
            raise AttentionControlError(
                f"buffered text shape {tuple(h_text_null.shape)} does not match "
                f"{tuple(h_text_cond.shape)}"
            )
        cross = torch.cat([h_text_null, h_img_cond], dim=-2)
        return params.project_kv(cross, temb)

    def split_block_forward(
        self,
        block_index: int,
        h: HiddenState,
        params: JointBlock,
        temb: torch.Tensor,
        t: int,
    ) -> HiddenState:
        if block_index not in self.initial_set:
            raise AttentionControlError(f"block {block_index} is not an initial block")
        kv = self.switched_kv(block_index, h.text, h.img, params, t, temb)
        text_path = params(h, temb)
        image_path = params(h, temb, kv=kv)
        self.attention_evaluations += 2
        return HiddenState(text=text_path.text, img=image_path.img)

    def apply(
        self,
        block_index: int,
        block: JointBlock,
        h: HiddenState,
        temb: torch.Tensor,
        t: int,
    ) -> HiddenState:
        if self.mode is ControlMode.SWITCH and block_index in self.initial_set:
            return self.split_block_forward(block_index, h, block, temb, t)
        self.attention_evaluations += 1
        if block_index not in self.block_set:
            return block(h, temb)
        match self.mode:
            case ControlMode.CAPTURE:
                self.capture_null_text(block_index, h.text, t)
                return block(h, temb)
            case ControlMode.SWITCH:
                kv = self.switched_kv(block_index, h.text, h.img, block, t, temb)
                return block(h, temb, kv=kv)
            case _:
                return block(h, temb)


def switched_eps(
    model: ToyDenoiser,
    x_t: torch.Tensor,
    t: int,
    cond: TextCondition,
    null_cond: TextCondition,
    control: Optional[AttentionControl],
):
    """Null pass in capture mode, then conditional pass in switch mode."""
    if control is None:
        return model.predict_eps(x_t, t, null_cond), model.predict_eps(x_t, t, cond)
    control.clear()
    control.mode = ControlMode.CAPTURE
    eps_null = model.predict_eps(x_t, t, null_cond, control)
    control.mode = ControlMode.SWITCH
    eps_cond = model.predict_eps(x_t, t, cond, control)
    control.mode = ControlMode.OFF
    return eps_null, eps_cond


@dataclass
class BlockSelection:
    impact_scores: List[float]
    selected: FrozenSet[int]

    @property
    def threshold(self) -> float:
        return selection_threshold(self.impact_scores)

    def delta(self, score: float) -> float:
        # all-infinite scores leave no finite threshold
        return score - self.threshold if math.isfinite(self.threshold) else math.inf

    def to_csv(self) -> str:
        """Mean PSNR per block and its offset from the selection threshold."""
        lines = ["block_index,mean_psnr,mean_psnr_delta"]
        lines += [
            f"{b},{score},{self.delta(score)}" for b, score in enumerate(self.impact_scores)
        ]
        return "\n".join(lines) + "\n"


def selection_threshold(scores: Sequence[float]) -> float:
    finite = [s for s in scores if math.isfinite(s)]
    return sum(finite) / len(finite) if finite else math.inf


def select_blocks(scores: Sequence[float]) -> FrozenSet[int]:
    threshold = selection_threshold(scores)
    return frozenset(b for b, s in enumerate(scores) if s == math.inf or s >= threshold)


def block_impact_study(
    model: ToyDenoiser,
    prompts: Sequence[TextCondition],
    seeds: Sequence[int],
    s: NoiseSchedule,
) -> BlockSelection:
    if not prompts:
        raise AttentionControlError("block impact study needs at least one prompt")
    null_cond = model.null_condition()
    num_blocks = model.config.num_blocks
    totals = [0.0] * num_blocks
    for cond in prompts:
        for seed in seeds:
            reference = generate(
                model, s, seed, lambda x, t: model.predict_eps(x, t, cond)
            )
            for b in range(num_blocks):
                control = AttentionControl([b], [b])
                sample = generate(
                    model,
                    s,
                    seed,
                    lambda x, t: switched_eps(model, x, t, cond, null_cond, control)[1],
                )
                # latents live in [-1, 1]
                totals[b] += psnr(sample, reference, peak=2.0)
    runs = len(prompts) * len(seeds)
    scores = [total / runs for total in totals]
    selected = select_blocks(scores)
    logging.info(f"Block impact scores {scores}, selected {sorted(selected)}")
    return BlockSelection(impact_scores=scores, selected=selected)


def attention_maps(
    model: ToyDenoiser,
    x_t: torch.Tensor,
    t: int,
    cond: TextCondition,
    query_slot: int = 0,
) -> torch.Tensor:
    """Head-averaged attention from one text token to the first frame's patches, per block."""
    config = model.config
    grid = (config.height // config.patch_size, config.width // config.patch_size)
    maps = []
    with torch.no_grad():
        h = model.embed([cond], x_t.unsqueeze(0))
        temb = model.time_embed(torch.tensor([t], dtype=torch.long))
        for block in model.blocks:
            h, weights = block(h, temb, keep_weights=True)
            row = weights[0, :, query_slot, config.text_len : config.text_len + grid[0] * grid[1]]
            maps.append(row.mean(dim=0).reshape(grid))
    return torch.stack(maps)


def resolve_block_sets(
    blocks, initial_blocks, num_blocks: int
) -> Tuple[Optional[Tuple[int, ...]], Optional[Tuple[int, ...]]]:
    """Turn configured block sets (index lists or preset keywords) into index tuples.

    ("auto", "auto") resolves to (None, None), the default sets of the model.
    """
    if blocks == "auto" and initial_blocks == "auto":
        return None, None
    default, default_initial = default_block_sets(num_blocks)
    if isinstance(blocks, str):
        block_set, preset_initial = (
            (default, default_initial) if blocks == "auto" else block_preset(blocks, num_blocks)
        )
    else:
        block_set = frozenset(blocks)
        preset_initial = default_initial & block_set
    if isinstance(initial_blocks, str):
        initial_set = (
            preset_initial if initial_blocks == "auto" else block_preset(initial_blocks, num_blocks)[1]
        )
    else:
        initial_set = frozenset(initial_blocks)
    return tuple(sorted(block_set)), tuple(sorted(initial_set))
