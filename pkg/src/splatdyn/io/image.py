"""Color PNG and float PFM readers/writers, plus per-frame output.

Color images are display-referred RGB in [0, 1] stored as 8-bit PNG
(round(255 v)); depth and alpha maps are lossless 32-bit float PFM,
little-endian (negative scale), rows bottom-to-top per the PFM format.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from ..render import RenderOutput


def write_png(image: np.ndarray, path) -> None:
    """Save an (H, W, 3) float image in [0, 1] as 8-bit RGB."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise ValueError(f"expected a nonempty (H, W, 3) image, "
                         f"got shape {image.shape}")
    if not np.isfinite(image).all():
        raise ValueError("image holds non-finite values")
    quantized = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Load an 8-bit image as (H, W, 3) floats in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_pfm(data: np.ndarray, path) -> None:
    """Save an (H, W) float map as grayscale PFM (float32, little-endian)."""
    data = np.asarray(data)
    if data.ndim != 2 or data.size == 0:
        raise ValueError(f"expected a nonempty (H, W) map, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError("map holds non-finite values")
    rows = np.ascontiguousarray(data[::-1].astype("<f4"))  # bottom-up
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(rows.tobytes())


def read_pfm(path) -> np.ndarray:
    """Load a grayscale PFM as an (H, W) float32 array (top-down rows)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"Pf", b"PF"):
        raise ValueError(f"{path}: not a PFM file")
    if parts[0] == b"PF":
        raise ValueError(f"{path}: color PFM is not supported, expected grayscale")
    try:
        w, h = (int(v) for v in parts[1].split())
        scale = float(parts[2])
    except ValueError:
        raise ValueError(f"{path}: malformed PFM header") from None
    if scale == 0.0:
        raise ValueError(f"{path}: PFM scale must be nonzero")
    dtype = "<f4" if scale < 0.0 else ">f4"
    payload = parts[3]
    if len(payload) < 4 * w * h:
        raise ValueError(f"{path}: PFM payload truncated "
                         f"({len(payload)} of {4 * w * h} bytes)")
    data = np.frombuffer(payload, dtype=dtype, count=w * h).reshape(h, w)
    return np.ascontiguousarray(data[::-1]).astype(np.float32)


def frame_paths(directory, index: int) -> dict:
    """File names for one rendered frame (color, depth, alpha)."""
    stem = os.path.join(str(directory), f"frame_{index:05d}")
    return {"color": stem + ".png", "depth": stem + "_depth.pfm",
            "alpha": stem + "_alpha.pfm"}


def write_frame(output: RenderOutput, directory, index: int) -> dict:
    """Write one render as color PNG + depth/alpha PFM; returns the paths."""
    if output.color.size == 0:
        raise ValueError("refusing to write an empty render")
    paths = frame_paths(directory, index)
    write_png(output.color, paths["color"])
    write_pfm(output.depth, paths["depth"])
    write_pfm(output.alpha, paths["alpha"])
    return paths


def read_frame(directory, index: int) -> RenderOutput:
    paths = frame_paths(directory, index)
    return RenderOutput(color=read_png(paths["color"]),
                        depth=read_pfm(paths["depth"]).astype(np.float64),
                        alpha=read_pfm(paths["alpha"]).astype(np.float64))
