import json
import struct
from typing import Dict, Optional, Tuple

import numpy as np
import torch

from derain.errors import DerainError

MAGIC = b"VDT1"
HEADER_NAME = "__header__"


class ContainerError(DerainError):
    pass


def _header_tensor(header: Dict) -> torch.Tensor:
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    return torch.tensor(list(raw), dtype=torch.float32)


def encode_container(tensors: Dict[str, torch.Tensor], header: Optional[Dict] = None) -> bytes:
    entries = dict(tensors)
    if header is not None:
        if HEADER_NAME in entries:
            raise ContainerError(f"tensor name {HEADER_NAME} is reserved")
        entries[HEADER_NAME] = _header_tensor(header)
    chunks = [MAGIC, struct.pack("<I", len(entries))]
    for name, tensor in entries.items():
        encoded = name.encode("utf-8")
        array = tensor.detach().cpu().contiguous().numpy().astype("<f4", copy=False)
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(array.tobytes(order="C"))
    return b"".join(chunks)


def decode_container(data: bytes) -> Tuple[Dict[str, torch.Tensor], Optional[Dict]]:
    if data[:4] != MAGIC:
        raise ContainerError(f"bad magic {data[:4]!r}")
    offset = 4

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise ContainerError("truncated container")
        chunk = data[offset : offset + n]
        offset += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    tensors: Dict[str, torch.Tensor] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        if name in tensors:
            raise ContainerError(f"duplicate tensor name {name}")
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        array = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims)
        tensors[name] = torch.from_numpy(array.astype(np.float32))
    if offset != len(data):
        raise ContainerError(f"{len(data) - offset} trailing bytes")
    header = None
    if HEADER_NAME in tensors:
        raw = bytes(int(v) for v in tensors.pop(HEADER_NAME).tolist())
        header = json.loads(raw.decode("utf-8"))
    return tensors, header


def write_container(path: str, tensors: Dict[str, torch.Tensor], header: Optional[Dict] = None):
    with open(path, "wb") as file:
        file.write(encode_container(tensors, header))


def read_container(path: str) -> Tuple[Dict[str, torch.Tensor], Optional[Dict]]:
    try:
        file = open(path, "rb")
    except OSError as e:
        raise ContainerError(f"Failed to open file {path}: {e}")
    with file:
        return decode_container(file.read())
