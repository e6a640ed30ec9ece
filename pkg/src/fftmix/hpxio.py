"""File formats: HPX1 tensors, 8-bit PGM images, and checkpoint directories.

HPX1 layout: magic bytes ``HPX1``, u32 little-endian rank, one u32 per
dimension, then a float32 little-endian row-major payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HPX1"
CHECKPOINT_MANIFEST = "manifest.json"


def write_hpx1(path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.dtype.kind != "f":
        raise ValueError("HPX1 stores float tensors")
    payload = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(payload.tobytes())


def read_hpx1(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(fh.read(4 * count), dtype="<f4")
        if data.size != count:
            raise ValueError(f"{path}: truncated payload")
    return data.reshape(shape).astype(np.float64)


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2D array as binary 8-bit PGM, min/max normalized to [0, 255]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM expects a 2D array")
    lo, hi = float(img.min()), float(img.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    quant = np.clip(np.round((img - lo) * scale), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(quant.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P5":
            raise ValueError("only binary PGM (P5) supported")
        dims = fh.readline().split()
        width, height = int(dims[0]), int(dims[1])
        maxval = int(fh.readline())
        data = np.frombuffer(fh.read(width * height), dtype=np.uint8)
    return data.reshape(height, width).astype(np.float64) / maxval


def save_checkpoint(out_dir, config_dict: dict, named_params) -> Path:
    """Write one HPX1 file per parameter plus a JSON manifest.

    The manifest echoes the model configuration and maps each parameter
    name to its tensor file.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor_map = {}
    for i, (name, tensor) in enumerate(named_params):
        fname = f"t{i:04d}.hpx1"
        write_hpx1(out / fname, tensor.data)
        tensor_map[name] = fname
    manifest = {"format": "fftmix-checkpoint-v1", "config": config_dict, "tensors": tensor_map}
    with open(out / CHECKPOINT_MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return out


def load_checkpoint_manifest(ckpt_dir) -> dict:
    path = Path(ckpt_dir) / CHECKPOINT_MANIFEST
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "fftmix-checkpoint-v1":
        raise ValueError(f"{path}: not a checkpoint manifest")
    return manifest


def load_checkpoint_tensors(ckpt_dir) -> dict[str, np.ndarray]:
    manifest = load_checkpoint_manifest(ckpt_dir)
    root = Path(ckpt_dir)
    return {name: read_hpx1(root / fname) for name, fname in manifest["tensors"].items()}
