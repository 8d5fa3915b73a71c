import contextlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from derain.errors import DerainError, ShapeError
from derain.schedule import NoiseSchedule, ddim_step
from derain.utils.container import read_container, write_container

VOCABULARY = ("<pad>", "scene", "rain", "light", "heavy", "snow")
PAD_ID = 0


class DenoiserError(DerainError):
    pass


@dataclass(eq=False, frozen=True)
class TextCondition:
    token_ids: Tuple[int, ...]
    embedding_dim: int
    # (slot, text feature) pairs that replace the embedded token at that slot
    pseudo_embeddings: Tuple[Tuple[int, torch.Tensor], ...] = ()

    @property
    def text_len(self) -> int:
        return len(self.token_ids)

    def is_null(self) -> bool:
        return all(i == PAD_ID for i in self.token_ids) and not self.pseudo_embeddings

    def same_as(self, other: "TextCondition") -> bool:
        if self.token_ids != other.token_ids:
            return False
        if len(self.pseudo_embeddings) != len(other.pseudo_embeddings):
            return False
        return all(
            a_slot == b_slot and torch.equal(a, b)
            for (a_slot, a), (b_slot, b) in zip(
                self.pseudo_embeddings, other.pseudo_embeddings
            )
        )

    def prompt(self) -> str:
        words = [VOCABULARY[i] for i in self.token_ids if i != PAD_ID]
        if self.pseudo_embeddings:
            words = ["<mean>"] + words
        return " ".join(words)

    def to_dict(self) -> Dict:
        return {
            "token_ids": list(self.token_ids),
            "embedding_dim": self.embedding_dim,
            "pseudo_embeddings": [
                [slot, feature.tolist()] for slot, feature in self.pseudo_embeddings
            ],
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "TextCondition":
        return cls(
            token_ids=tuple(d["token_ids"]),
            embedding_dim=d["embedding_dim"],
            pseudo_embeddings=tuple(
                (slot, torch.tensor(feature, dtype=torch.float32))
                for slot, feature in d.get("pseudo_embeddings", [])
            ),
        )


def tokenize(prompt: str, text_len: int, embedding_dim: int) -> TextCondition:
    words = prompt.split()
    if len(words) > text_len:
        raise DenoiserError(f"prompt '{prompt}' longer than {text_len} tokens")
    ids = []
    for word in words:
        if word not in VOCABULARY or word == VOCABULARY[PAD_ID]:
            raise DenoiserError(f"Unknown token '{word}'")
        ids.append(VOCABULARY.index(word))
    ids += [PAD_ID] * (text_len - len(ids))
    return TextCondition(token_ids=tuple(ids), embedding_dim=embedding_dim)


def null_condition(text_len: int, embedding_dim: int) -> TextCondition:
    return TextCondition(token_ids=(PAD_ID,) * text_len, embedding_dim=embedding_dim)


@dataclass
class DenoiserConfig:
    num_blocks: int = 8
    dim: int = 64
    heads: int = 4
    text_len: int = 4
    patch_size: int = 4
    frames: int = 4
    channels: int = 3
    height: int = 16
    width: int = 16
    ff_mult: int = 4
    vocab_size: int = len(VOCABULARY)

    def __post_init__(self):
        if self.num_blocks < 1:
            raise DenoiserError(f"num_blocks must be positive, got {self.num_blocks}")
        if self.dim % self.heads != 0:
            raise DenoiserError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise DenoiserError(
                f"frame {self.height}x{self.width} not divisible by patch {self.patch_size}"
            )

    @property
    def img_tokens(self) -> int:
        return (
            self.frames
            * (self.height // self.patch_size)
            * (self.width // self.patch_size)
        )

    @property
    def video_shape(self) -> Tuple[int, int, int, int]:
        return (self.frames, self.channels, self.height, self.width)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DenoiserConfig":
        return cls(**json.loads(text))


@dataclass
class HiddenState:
    text: torch.Tensor  # (B, text_len, dim)
    img: torch.Tensor  # (B, img_tokens, dim)

    @property
    def text_len(self) -> int:
        return self.text.shape[-2]

    def combined(self) -> torch.Tensor:
        return torch.cat([self.text, self.img], dim=-2)

    @classmethod
    def split(cls, h: torch.Tensor, text_len: int) -> "HiddenState":
        return cls(text=h[..., :text_len, :], img=h[..., text_len:, :])


def scaled_dot_attention(q, k, v, heads: int):
    """Multi-head softmax attention over (..., N, dim) inputs.

    Returns the merged head outputs and the attention weights (..., heads, N, N).
    """
    *lead, n_q, dim = q.shape
    n_k = k.shape[-2]
    d = dim // heads
    qh = q.reshape(*lead, n_q, heads, d).transpose(-3, -2)
    kh = k.reshape(*lead, n_k, heads, d).transpose(-3, -2)
    vh = v.reshape(*lead, n_k, heads, d).transpose(-3, -2)
    weights = torch.softmax(qh @ kh.transpose(-2, -1) / math.sqrt(d), dim=-1)
    out = (weights @ vh).transpose(-3, -2).reshape(*lead, n_q, dim)
    return out, weights


class JointBlock(nn.Module):
    """Pre-norm transformer block attending over text | image tokens jointly."""

    def __init__(self, dim: int, heads: int, ff_mult: int = 4):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(dim, dim)
        self.to_v = nn.Linear(dim, dim)
        self.to_out = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, dim * ff_mult), nn.GELU(), nn.Linear(dim * ff_mult, dim)
        )
        self.t_proj = nn.Linear(dim, dim)

    def attention_inputs(self, h: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        return self.norm1(h) + self.t_proj(temb).unsqueeze(-2)

    def project_kv(self, h: torch.Tensor, temb: torch.Tensor):
        x = self.attention_inputs(h, temb)
        return self.to_k(x), self.to_v(x)

    def forward(
        self,
        h: HiddenState,
        temb: torch.Tensor,
        kv: Optional[Tuple[torch.Tensor, torch.Tensor]] = None,
        keep_weights: bool = False,
    ):
        combined = h.combined()
        x = self.attention_inputs(combined, temb)
        q = self.to_q(x)
        if kv is None:
            k, v = self.to_k(x), self.to_v(x)
        else:
            k, v = kv
        attn, weights = scaled_dot_attention(q, k, v, self.heads)
        combined = combined + self.to_out(attn)
        ff_in = self.norm2(combined) + self.t_proj(temb).unsqueeze(-2)
        combined = combined + self.ff(ff_in)
        out = HiddenState.split(combined, h.text_len)
        if keep_weights:
            return out, weights
        return out


BlockParams = JointBlock


def joint_attention(
    h: HiddenState,
    p: BlockParams,
    control,
    block_index: int,
    t: int,
    temb: torch.Tensor,
) -> HiddenState:
    if control is None:
        return p(h, temb)
    return control.apply(block_index, p, h, temb, t)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / max(half - 1, 1)
    )
    args = t.to(torch.float32)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def patchify(video: torch.Tensor, p: int) -> torch.Tensor:
    b, f, c, h, w = video.shape
    x = video.reshape(b, f, c, h // p, p, w // p, p)
    x = x.permute(0, 1, 3, 5, 2, 4, 6)
    return x.reshape(b, f * (h // p) * (w // p), c * p * p)


def unpatchify(tokens: torch.Tensor, config: DenoiserConfig) -> torch.Tensor:
    p = config.patch_size
    f, c, h, w = config.video_shape
    b = tokens.shape[0]
    x = tokens.reshape(b, f, h // p, w // p, c, p, p)
    x = x.permute(0, 1, 4, 2, 5, 3, 6)
    return x.reshape(b, f, c, h, w)


class ToyDenoiser(nn.Module):
    def __init__(self, config: DenoiserConfig, seed: Optional[int] = 0):
        super().__init__()
        self.config = config
        with _seeded(seed):
            self.token_embedding = nn.Embedding(config.vocab_size, config.dim)
            self.text_pos = nn.Parameter(torch.randn(config.text_len, config.dim) * 0.02)
            self.patch_in = nn.Linear(
                config.channels * config.patch_size**2, config.dim
            )
            self.img_pos = nn.Parameter(
                torch.randn(config.img_tokens, config.dim) * 0.02
            )
            self.time_mlp = nn.Sequential(
                nn.Linear(config.dim, config.dim), nn.SiLU(), nn.Linear(config.dim, config.dim)
            )
            self.blocks = nn.ModuleList(
                [
                    JointBlock(config.dim, config.heads, config.ff_mult)
                    for _ in range(config.num_blocks)
                ]
            )
            self.norm_out = nn.LayerNorm(config.dim)
            self.patch_out = nn.Linear(config.dim, config.channels * config.patch_size**2)
        self.ready = seed is not None
        # training captions, the corpus for mean-embedding prompts
        self.corpus: List[str] = []

    def embed_text(self, cond: TextCondition) -> torch.Tensor:
        if cond.text_len != self.config.text_len:
            raise ShapeError(
                f"condition has {cond.text_len} tokens, model expects {self.config.text_len}"
            )
        if cond.embedding_dim != self.config.dim:
            raise ShapeError(
                f"condition dim {cond.embedding_dim} does not match model dim {self.config.dim}"
            )
        if any(not 0 <= i < self.config.vocab_size for i in cond.token_ids):
            raise DenoiserError(f"Unknown token id in {cond.token_ids}")
        ids = torch.tensor(cond.token_ids, dtype=torch.long)
        text = self.token_embedding(ids) + self.text_pos
        for slot, feature in cond.pseudo_embeddings:
            text = text.clone()
            text[slot] = feature.to(text.dtype)
        return text

    def embed_video(self, video: torch.Tensor) -> torch.Tensor:
        if tuple(video.shape[-4:]) != self.config.video_shape:
            raise ShapeError(
                f"video shape {tuple(video.shape[-4:])} does not match {self.config.video_shape}"
            )
        return self.patch_in(patchify(video, self.config.patch_size)) + self.img_pos

    def embed(self, conds: Sequence[TextCondition], video: torch.Tensor) -> HiddenState:
        text = torch.stack([self.embed_text(c) for c in conds])
        return HiddenState(text=text, img=self.embed_video(video))

    def time_embed(self, t: torch.Tensor) -> torch.Tensor:
        return self.time_mlp(timestep_embedding(t, self.config.dim).to(self.text_pos.dtype))

    def run_blocks(self, h: HiddenState, temb, control=None, t: int = 0) -> HiddenState:
        for b, block in enumerate(self.blocks):
            h = joint_attention(h, block, control, b, t, temb)
        return h

    def forward(self, video, t, conds: Sequence[TextCondition], control=None):
        """video (B, F, C, H, W), t (B,) integer steps."""
        if not self.ready:
            raise DenoiserError("model weights are not initialized")
        h = self.embed(conds, video)
        temb = self.time_embed(t)
        step = int(t[0]) if t.numel() else 0
        h = self.run_blocks(h, temb, control, step)
        return unpatchify(self.patch_out(self.norm_out(h.img)), self.config)

    def predict_eps(self, video_latent, t: int, cond: TextCondition, control=None):
        if video_latent.dim() != 4:
            raise ShapeError(f"expected (F, C, H, W) latent, got {tuple(video_latent.shape)}")
        with torch.no_grad():
            out = self(
                video_latent.unsqueeze(0),
                torch.tensor([t], dtype=torch.long),
                [cond],
                control,
            )
        return out[0]

    def null_condition(self) -> TextCondition:
        return null_condition(self.config.text_len, self.config.dim)

    def condition(self, prompt: str) -> TextCondition:
        return tokenize(prompt, self.config.text_len, self.config.dim)


@contextlib.contextmanager
def _seeded(seed: Optional[int]):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(0 if seed is None else seed)
        yield


def embed(model: ToyDenoiser, cond: TextCondition, video, t: int) -> Tuple[HiddenState, torch.Tensor]:
    with torch.no_grad():
        h = model.embed([cond], video.unsqueeze(0))
        temb = model.time_embed(torch.tensor([t], dtype=torch.long))
    return h, temb


def predict_eps(video_latent, t: int, cond: TextCondition, control, model: ToyDenoiser):
    return model.predict_eps(video_latent, t, cond, control)


def to_latent(video: torch.Tensor) -> torch.Tensor:
    return video * 2.0 - 1.0


def from_latent(latent: torch.Tensor) -> torch.Tensor:
    return (latent + 1.0) / 2.0


def generate(
    model: ToyDenoiser,
    s: NoiseSchedule,
    seed: int,
    eps_fn: Callable,
    start: Optional[torch.Tensor] = None,
):
    """Deterministic DDIM generation from seeded noise; eps_fn(x_t, t) -> eps."""
    generator = torch.Generator().manual_seed(seed)
    x = (
        torch.randn(model.config.video_shape, generator=generator)
        if start is None
        else start
    )
    for t in reversed(range(s.num_steps)):
        x = ddim_step(x, eps_fn(x, t), t, s)
    return x


def save_checkpoint(model: ToyDenoiser, path: str):
    tensors = {name: p.detach() for name, p in model.state_dict().items()}
    header = {"config": asdict(model.config), "corpus": list(model.corpus)}
    write_container(path, tensors, header=header)
    logging.info(f"Wrote checkpoint {path} ({len(tensors)} tensors)")


def load_checkpoint(path: str) -> ToyDenoiser:
    tensors, header = read_container(path)
    if header is None or "config" not in header:
        raise DenoiserError(f"checkpoint {path} has no config header")
    model = ToyDenoiser(DenoiserConfig(**header["config"]), seed=None)
    try:
        model.load_state_dict(tensors)
    except RuntimeError as e:
        raise DenoiserError(f"checkpoint {path} does not match its config: {e}")
    model.corpus = header.get("corpus", [])
    for name, p in model.state_dict().items():
        if not torch.isfinite(p).all():
            raise DenoiserError(f"parameter {name} in {path} is not finite")
    model.ready = True
    model.eval()
    logging.info(f"Loaded checkpoint {path}")
    return model
