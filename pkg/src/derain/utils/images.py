import glob
import io
import os
from typing import List

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from derain.errors import DerainError


class ImageError(DerainError):
    pass


def to_uint8(frame: torch.Tensor) -> np.ndarray:
    """(C, H, W) in [0, 1] -> (H, W, 3) uint8; single-channel frames are repeated."""
    array = frame.detach().clamp(0.0, 1.0).mul(255.0).round().to(torch.uint8)
    if array.shape[0] == 1:
        array = array.repeat(3, 1, 1)
    return array[:3].permute(1, 2, 0).contiguous().numpy()


def encode_ppm(frame: torch.Tensor) -> bytes:
    pixels = to_uint8(frame)
    h, w, _ = pixels.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def decode_ppm(data: bytes) -> torch.Tensor:
    """Binary PPM -> (3, H, W) in [0, 1]."""
    try:
        with Image.open(io.BytesIO(data), formats=["PPM"]) as image:
            image.load()
            if image.mode != "RGB":
                raise ImageError(f"expected an RGB PPM, got mode {image.mode}")
            pixels = np.asarray(image, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise ImageError(f"cannot decode PPM: {e}") from e
    return torch.from_numpy(pixels.copy()).permute(2, 0, 1).float() / 255.0


def read_frames(directory: str) -> torch.Tensor:
    """Stack the PPM frames of a directory, in name order, into (F, 3, H, W)."""
    paths = sorted(glob.glob(os.path.join(directory, "*.ppm")))
    if not paths:
        raise ImageError(f"no PPM frames in {directory}")
    frames = []
    for path in paths:
        with open(path, "rb") as file:
            frames.append(decode_ppm(file.read()))
    if len({tuple(f.shape) for f in frames}) != 1:
        raise ImageError(f"frames in {directory} differ in size")
    return torch.stack(frames)


def write_frames(video: torch.Tensor, directory: str, prefix: str, png: bool = False) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for f, frame in enumerate(video):
        path = os.path.join(directory, f"{prefix}_{f:03d}.ppm")
        with open(path, "wb") as file:
            file.write(encode_ppm(frame))
        paths.append(path)
        if png:
            png_path = os.path.join(directory, f"{prefix}_{f:03d}.png")
            Image.fromarray(to_uint8(frame)).save(png_path)
            paths.append(png_path)
    return paths
