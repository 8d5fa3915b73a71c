import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch

from derain.errors import DerainError
from derain.utils.container import read_container, write_container

STREAK_COLOR = (0.95, 0.95, 0.95)
INTENSITIES = ("none", "light", "heavy")
LIGHT_MAX_STREAKS = 8

# streak count and opacity used by make_dataset per intensity class
INTENSITY_PRESETS = {
    "none": (0, 0.0),
    "light": (5, 0.45),
    "heavy": (14, 0.8),
}


class SceneError(DerainError):
    pass


@dataclass(frozen=True)
class RainSceneSpec:
    seed: int = 0
    frames: int = 4
    height: int = 16
    width: int = 16
    background: str = "gradient"
    camera_velocity: Tuple[float, float] = (1.0, 0.0)
    streak_count: int = 0
    streak_angle: float = 15.0
    streak_length: int = 5
    streak_opacity: float = 0.6
    fall_speed: float = 3.0
    intensity: str = "none"
    weather: str = "rain"

    def validate(self):
        if self.frames < 2 or self.height < 2 or self.width < 2:
            raise SceneError(
                f"degenerate scene {self.frames}x{self.height}x{self.width}"
            )
        if not 0.0 <= self.streak_opacity <= 1.0:
            raise SceneError(f"streak opacity {self.streak_opacity} outside [0, 1]")
        if min(self.streak_count, self.streak_length, self.fall_speed) < 0:
            raise SceneError("streak parameters must be nonnegative")
        if self.intensity not in INTENSITIES:
            raise SceneError(f"Intensity class {self.intensity} not defined.")
        if self.weather not in ("rain", "snow"):
            raise SceneError(f"Weather {self.weather} not defined.")
        if self.background not in ("gradient", "shapes"):
            raise SceneError(f"Background kind {self.background} not defined.")
        match self.intensity:
            case "none" if self.streak_count != 0:
                raise SceneError("intensity 'none' requires streak_count 0")
            case "light" if not 0 < self.streak_count <= LIGHT_MAX_STREAKS:
                raise SceneError(
                    f"intensity 'light' requires 1..{LIGHT_MAX_STREAKS} streaks"
                )
            case "heavy" if self.streak_count <= LIGHT_MAX_STREAKS:
                raise SceneError(
                    f"intensity 'heavy' requires more than {LIGHT_MAX_STREAKS} streaks"
                )

    @property
    def step(self) -> Tuple[int, int]:
        """Whole-pixel (dy, dx) displacement of the weather layer per frame."""
        if self.weather == "snow":
            # slower fall with a lateral drift
            return round(self.fall_speed / 3), 1
        theta = math.radians(self.streak_angle)
        return round(self.fall_speed * math.cos(theta)), round(
            self.fall_speed * math.sin(theta)
        )

    @property
    def caption(self) -> str:
        if self.intensity == "none":
            return "scene"
        if self.weather == "snow":
            return "scene snow"
        return f"scene {self.intensity} rain"


@dataclass
class SceneBundle:
    clean: torch.Tensor  # (F, C, H, W) in [0, 1]
    rainy: torch.Tensor
    rain_mask: torch.Tensor  # (F, 1, H, W), 1 on streak pixels
    rain_layer: torch.Tensor  # (F, 1, H, W), per-pixel alpha
    flow: torch.Tensor  # (F-1, 2, H, W) backward flow, channel 0 is dx
    caption: str
    spec: Optional[RainSceneSpec] = None


def _background(spec: RainSceneSpec, rng: np.random.Generator) -> np.ndarray:
    f = np.arange(spec.frames, dtype=np.float64)[:, None, None]
    ys, xs = np.meshgrid(
        np.arange(spec.height, dtype=np.float64),
        np.arange(spec.width, dtype=np.float64),
        indexing="ij",
    )
    vx, vy = spec.camera_velocity
    # world coordinates seen by frame f
    wx = xs[None] - f * vx
    wy = ys[None] - f * vy
    channels = []
    match spec.background:
        case "gradient":
            for _ in range(3):
                kx, ky = rng.uniform(-1.0, 1.0, size=2) / max(spec.height, spec.width)
                phase = rng.uniform(0, 2 * np.pi)
                base = rng.uniform(0.3, 0.5)
                channels.append(base + 0.2 * np.sin(2 * np.pi * (kx * wx + ky * wy) + phase))
        case "shapes":
            n_blobs = int(rng.integers(2, 5))
            centers = rng.uniform(0, [spec.width, spec.height], size=(n_blobs, 2))
            radii = rng.uniform(2.0, 4.0, size=n_blobs)
            colors = rng.uniform(0.0, 0.35, size=(n_blobs, 3))
            for c in range(3):
                layer = np.full(wx.shape, 0.2)
                for (cx, cy), r, color in zip(centers, radii, colors[:, c]):
                    layer = layer + color * np.exp(
                        -((wx - cx) ** 2 + (wy - cy) ** 2) / (2 * r**2)
                    )
                channels.append(layer)
    return np.clip(np.stack(channels, axis=1), 0.0, 0.8)


def _first_frame_mask(spec: RainSceneSpec, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros((spec.height, spec.width))
    theta = math.radians(spec.streak_angle)
    for _ in range(spec.streak_count):
        y0 = rng.uniform(0, spec.height)
        x0 = rng.uniform(0, spec.width)
        if spec.weather == "snow":
            cy, cx = int(y0), int(x0)
            for dy, dx in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)):
                mask[(cy + dy) % spec.height, (cx + dx) % spec.width] = 1.0
            continue
        for s in np.linspace(0.0, spec.streak_length, 2 * spec.streak_length + 1):
            y = int(round(y0 + s * math.cos(theta))) % spec.height
            x = int(round(x0 + s * math.sin(theta))) % spec.width
            mask[y, x] = 1.0
    return mask


def composite(
    clean: torch.Tensor, mask: torch.Tensor, opacity: float, color=STREAK_COLOR
) -> torch.Tensor:
    color = torch.tensor(color, dtype=clean.dtype).reshape(1, -1, 1, 1)
    return (clean * (1.0 - opacity * mask) + opacity * color * mask).clamp(0.0, 1.0)


def render(spec: RainSceneSpec) -> SceneBundle:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    clean = torch.from_numpy(_background(spec, rng)).float()
    mask0 = torch.from_numpy(_first_frame_mask(spec, rng)).float()
    dy, dx = spec.step
    mask = torch.stack(
        [torch.roll(mask0, shifts=(f * dy, f * dx), dims=(0, 1)) for f in range(spec.frames)]
    ).unsqueeze(1)
    rainy = composite(clean, mask, spec.streak_opacity) if spec.streak_count else clean.clone()
    vx, vy = spec.camera_velocity
    flow = torch.empty(spec.frames - 1, 2, spec.height, spec.width)
    flow[:, 0] = vx
    flow[:, 1] = vy
    return SceneBundle(
        clean=clean,
        rainy=rainy,
        rain_mask=mask,
        rain_layer=spec.streak_opacity * mask,
        flow=flow,
        caption=spec.caption,
        spec=spec,
    )


def spec_for_intensity(
    intensity: str, seed: int, frames: int = 4, height: int = 16, width: int = 16, weather="rain"
) -> RainSceneSpec:
    rng = np.random.default_rng(seed)
    count, opacity = INTENSITY_PRESETS[intensity]
    return RainSceneSpec(
        seed=seed,
        frames=frames,
        height=height,
        width=width,
        background=("gradient", "shapes")[int(rng.integers(0, 2))],
        camera_velocity=(float(rng.integers(-1, 2)), float(rng.integers(-1, 2))),
        streak_count=count,
        streak_angle=float(rng.uniform(-20.0, 20.0)),
        streak_length=int(rng.integers(3, 7)),
        streak_opacity=opacity,
        fall_speed=float(rng.uniform(2.0, 4.0)),
        intensity=intensity,
        weather=weather,
    )


def make_dataset(
    n: int, seed: int, frames: int = 4, height: int = 16, width: int = 16
) -> List[SceneBundle]:
    if n <= 0:
        raise SceneError(f"dataset size must be positive, got {n}")
    seeds = np.random.SeedSequence(seed).generate_state(n)
    bundles = [
        render(
            spec_for_intensity(
                INTENSITIES[i % len(INTENSITIES)], int(seeds[i]), frames, height, width
            )
        )
        for i in range(n)
    ]
    logging.info(f"Rendered {n} scenes with seed {seed}")
    return bundles


def rain_layer_energy(bundle: SceneBundle) -> float:
    return torch.mean(bundle.rain_layer.double() ** 2).item()


def save_bundle(bundle: SceneBundle, path: str):
    tensors = {
        "clean": bundle.clean,
        "rainy": bundle.rainy,
        "rain_mask": bundle.rain_mask,
        "rain_layer": bundle.rain_layer,
        "flow": bundle.flow,
    }
    header = {
        "caption": bundle.caption,
        "spec": None if bundle.spec is None else asdict(bundle.spec),
    }
    write_container(path, tensors, header)


def load_bundle(path: str) -> SceneBundle:
    tensors, header = read_container(path)
    missing = {"clean", "rainy", "rain_mask", "rain_layer", "flow"} - set(tensors)
    if header is None or missing:
        raise SceneError(f"{path} is not a scene bundle (missing {sorted(missing)})")
    spec = None
    if header.get("spec") is not None:
        fields = dict(header["spec"])
        fields["camera_velocity"] = tuple(fields["camera_velocity"])
        spec = RainSceneSpec(**fields)
    return SceneBundle(
        clean=tensors["clean"],
        rainy=tensors["rainy"],
        rain_mask=tensors["rain_mask"],
        rain_layer=tensors["rain_layer"],
        flow=tensors["flow"],
        caption=header["caption"],
        spec=spec,
    )


def bundle_paths(directory: str) -> List[str]:
    if not os.path.isdir(directory):
        raise SceneError(f"dataset directory {directory} does not exist")
    return sorted(
        os.path.join(directory, name)
        for name in os.listdir(directory)
        if name.startswith("scene_") and name.endswith(".vdt")
    )


def load_dataset(directory: str) -> List[SceneBundle]:
    paths = bundle_paths(directory)
    if not paths:
        raise SceneError(f"no scene bundles in {directory}")
    logging.info(f"Loading {len(paths)} scenes from {directory}")
    return [load_bundle(path) for path in paths]
