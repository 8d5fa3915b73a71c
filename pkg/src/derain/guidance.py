import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import torch

from derain.attention_control import AttentionControl, switched_eps
from derain.denoiser import PAD_ID, TextCondition, ToyDenoiser, VOCABULARY
from derain.errors import DerainError, check_same_shape


class GuidanceError(DerainError):
    pass


@dataclass(frozen=True, eq=False)
class GuidanceSpec:
    lambda_: float
    t_skip: int
    negative_condition: TextCondition
    null_condition: TextCondition
    steps: int

    def __post_init__(self):
        if self.lambda_ < 0:
            raise GuidanceError(f"lambda must be nonnegative, got {self.lambda_}")
        if not 0 <= self.t_skip <= self.steps:
            raise GuidanceError(f"t_skip {self.t_skip} outside [0, {self.steps}]")
        if self.lambda_ > 0 and self.negative_condition.same_as(self.null_condition):
            logging.warning("Negative condition equals the null condition, guidance is a no-op")

    def in_skip_window(self, t: int) -> bool:
        """The first t_skip denoising steps (highest step indices) follow plain reconstruction."""
        return t >= self.steps - self.t_skip


def guided_eps(eps_null: torch.Tensor, eps_cond: torch.Tensor, lambda_: float) -> torch.Tensor:
    check_same_shape(eps_null, eps_cond, "eps_null and eps_cond")
    if lambda_ == 0:
        return eps_null
    return eps_null + lambda_ * (eps_null - eps_cond)


def dual_pass(
    x_t: torch.Tensor,
    t: int,
    spec: GuidanceSpec,
    model: ToyDenoiser,
    control: Optional[AttentionControl] = None,
) -> torch.Tensor:
    if spec.in_skip_window(t):
        return model.predict_eps(x_t, t, spec.null_condition)
    eps_null, eps_cond = switched_eps(
        model, x_t, t, spec.negative_condition, spec.null_condition, control
    )
    return guided_eps(eps_null, eps_cond, spec.lambda_)


def mean_embedding(model: ToyDenoiser, token: str, corpus: Sequence[str]) -> torch.Tensor:
    """Mean text feature of `token` over every caption of the corpus that contains it.

    Positional embeddings are taken out before averaging and slot 0's is
    put back, since the result replaces the token at slot 0.
    """
    features = []
    with torch.no_grad():
        for caption in corpus:
            words = caption.split()
            if token not in words:
                continue
            slot = words.index(token)
            text = model.embed_text(model.condition(caption))
            features.append(text[slot] - model.text_pos[slot])
        if not features:
            raise GuidanceError(f"no caption in the corpus contains '{token}'")
        return torch.stack(features).mean(dim=0) + model.text_pos[0]


def build_negative_condition(
    mode: str,
    concept: str,
    model: ToyDenoiser,
    corpus: Optional[Sequence[str]] = None,
) -> TextCondition:
    words = concept.split()
    if not words:
        raise GuidanceError("empty concept")
    for word in words:
        if word not in VOCABULARY or word == VOCABULARY[PAD_ID]:
            raise GuidanceError(f"Unknown concept token '{word}'")
    head = words[-1]
    match mode:
        case "simple" | "implicit":
            return model.condition(head)
        case "mean" | "mean_embedding":
            if not corpus:
                raise GuidanceError("mean embedding needs a nonempty caption corpus")
            null = model.null_condition()
            return TextCondition(
                token_ids=null.token_ids,
                embedding_dim=null.embedding_dim,
                pseudo_embeddings=((0, mean_embedding(model, head, corpus)),),
            )
        case "contextual":
            if len(words) == 1:
                logging.warning(f"Contextual prompt '{concept}' has a single token")
            return model.condition(concept)
        case other:
            raise GuidanceError(f"Prompt mode {other} not defined.")
