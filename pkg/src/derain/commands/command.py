import json
import logging
import os
from typing import Dict, List, Optional, Tuple

import torch

from derain.attention_control import resolve_block_sets
from derain.config import ConfigError, RunConfig
from derain.denoiser import ToyDenoiser, load_checkpoint
from derain.pipeline import DerainSettings
from derain.schedule import NoiseSchedule, build_schedule
from derain.synthetic_rain import SceneBundle, load_dataset, make_dataset
from derain.utils.container import read_container, write_container
from derain.utils.images import read_frames, write_frames
from derain.utils.manifest import RunManifest, sha256_file


# held-out scenes are rendered from seed + this offset
HELDOUT_SEED_OFFSET = 1000


class Command:
    """One subcommand run inside its own run directory.

    Subclasses implement `run`; every file they write goes through the
    helpers below so it ends up in the manifest.
    """

    def __init__(self, run_config: RunConfig, run_dir: str, manifest: RunManifest) -> None:
        self.config = run_config
        self.run_dir = run_dir
        self.manifest = manifest

    @classmethod
    def check(cls, run_config: RunConfig):
        """Reject a configuration before the run directory exists."""
        pass

    def run(self):
        raise NotImplementedError()

    def path(self, *parts: str) -> str:
        path = os.path.join(self.run_dir, *parts)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        return path

    def schedule(self) -> NoiseSchedule:
        return build_schedule(
            self.config.steps,
            self.config.beta_start,
            self.config.beta_end,
            self.config.schedule_kind,
        )

    def save_tensors(self, name: str, tensors: Dict[str, torch.Tensor], header=None) -> str:
        path = self.path(name)
        write_container(path, tensors, header)
        self.manifest.add_outputs([path])
        return path

    def save_video(self, name: str, video: torch.Tensor) -> List[str]:
        """Container `<name>.vdt` plus one PPM (and optionally PNG) per frame."""
        paths = [self.path(f"{name}.vdt")]
        write_container(paths[0], {"video": video})
        paths += write_frames(video, self.path("frames", ""), name, png=self.config.png)
        self.manifest.add_outputs(paths)
        return paths

    def save_text(self, name: str, text: str) -> str:
        path = self.path(name)
        with open(path, "w") as file:
            file.write(text)
        self.manifest.add_outputs([path])
        return path

    def save_json(self, name: str, data) -> str:
        return self.save_text(name, json.dumps(data, indent=2, sort_keys=True) + "\n")

    def register(self, path: str) -> str:
        self.manifest.add_outputs([path])
        return path


class ModelCommand(Command):
    """Command that needs a trained toy denoiser."""

    @classmethod
    def check(cls, run_config: RunConfig):
        super().check(run_config)
        if run_config.checkpoint is None:
            raise ConfigError(f"{run_config.command} needs --checkpoint")
        if not os.path.exists(run_config.checkpoint):
            raise ConfigError(f"checkpoint {run_config.checkpoint} does not exist")

    def load_model(self) -> ToyDenoiser:
        model = load_checkpoint(self.config.checkpoint)
        self.manifest.data["checkpoint_sha256"] = sha256_file(self.config.checkpoint)
        return model

    def settings(self, model: ToyDenoiser) -> DerainSettings:
        blocks, initial = resolve_block_sets(
            self.config.blocks, self.config.blocks_initial, model.config.num_blocks
        )
        return DerainSettings(
            lambda_=self.config.effective_lambda,
            t_skip=self.config.t_skip,
            prompt_mode=self.config.prompt_mode,
            concept=self.config.concept,
            attn_switch=self.config.attn_switch,
            blocks=blocks,
            blocks_initial=initial,
            invert_with=self.config.invert_with,
            inversion=self.config.inversion,
            seed=self.config.seed,
        )


def require_path(run_config: RunConfig, key: str):
    value = getattr(run_config, key)
    if value is None:
        raise ConfigError(f"{run_config.command} needs --{key.replace('_', '-')}")
    if not os.path.exists(value):
        raise ConfigError(f"{key} {value} does not exist")


def read_tensor(path: str, key: str = "video") -> torch.Tensor:
    """Tensor `key` of a container, or its only tensor; a directory is read as PPM frames."""
    if os.path.isdir(path):
        return read_frames(path)
    tensors, _ = read_container(path)
    if key in tensors:
        return tensors[key]
    if len(tensors) == 1:
        return next(iter(tensors.values()))
    raise ConfigError(f"{path} has no tensor '{key}' (found {sorted(tensors)})")


def read_optional(
    explicit: Optional[str], bundle: Optional[str], key: str
) -> Optional[torch.Tensor]:
    """Tensor from an explicitly given file, else entry `key` of a bundle if present."""
    if explicit is not None:
        return read_tensor(explicit, key)
    if bundle is None or os.path.isdir(bundle):
        return None
    tensors, _ = read_container(bundle)
    return tensors.get(key)


def scenes(
    run_config: RunConfig,
    seed_offset: int = 0,
    video_shape: Optional[Tuple[int, int, int, int]] = None,
) -> List[SceneBundle]:
    """Scenes from `--dataset` (first `num_videos`), else rendered from `seed + seed_offset`.

    `video_shape` is the (F, C, H, W) the model expects; rendered scenes
    use its frame count and size, loaded scenes must match it.
    """
    if run_config.dataset is not None:
        if not os.path.isdir(run_config.dataset):
            raise ConfigError(f"dataset {run_config.dataset} is not a directory")
        bundles = load_dataset(run_config.dataset)[: run_config.num_videos]
    else:
        if video_shape is None:
            frames, height, width = run_config.frames, run_config.height, run_config.width
        else:
            frames, _, height, width = video_shape
        bundles = make_dataset(
            run_config.num_videos, run_config.seed + seed_offset, frames, height, width
        )
    if video_shape is not None:
        for bundle in bundles:
            if tuple(bundle.clean.shape) != tuple(video_shape):
                raise ConfigError(
                    f"scene shape {tuple(bundle.clean.shape)} does not match the model's {tuple(video_shape)}"
                )
    logging.info(f"Using {len(bundles)} scenes")
    return bundles
