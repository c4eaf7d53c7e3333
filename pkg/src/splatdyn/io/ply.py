"""Splat PLY reader/writer.

Binary little-endian PLY with the de-facto splat layout: per-vertex float
properties x, y, z, opacity (pre-sigmoid logit), scale_0..2 (log scale),
rot_0..3 (quaternion, w first), f_dc_0..2 (order-0 spherical-harmonic
color coefficients).  Loading applies the activations (sigmoid opacity,
exp scale, normalized quaternion, C = 0.5 + SH0 * f_dc clamped to [0, 1])
and rebuilds each covariance as R diag(s^2) R^T; saving inverts them.
Extra float properties from third-party reconstructions are skipped.
"""

from __future__ import annotations

import numpy as np

from ..gaussians import GaussianCloud
from ..rotation import compose_covariance, decompose_covariance

SH_DC = 0.28209479177387814  # 1 / (2 sqrt(pi)), the order-0 SH basis value

FIELDS = ("x", "y", "z", "opacity",
          "scale_0", "scale_1", "scale_2",
          "rot_0", "rot_1", "rot_2", "rot_3",
          "f_dc_0", "f_dc_1", "f_dc_2")

# logit magnitudes beyond this round to exactly 0/1 through float sigmoid
_LOGIT_CLIP = 40.0

_PLY_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8",
              "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
              "short": "<i2", "ushort": "<u2", "int": "<i4", "int32": "<i4",
              "uint": "<u4", "uint32": "<u4"}


def _parse_header(blob: bytes, path):
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    lines = blob[:end].decode("ascii", errors="replace").splitlines()
    fmt = next((ln for ln in lines if ln.startswith("format ")), None)
    if fmt is None or fmt.split() != ["format", "binary_little_endian", "1.0"]:
        raise ValueError(f"{path}: expected format binary_little_endian 1.0")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for ln in lines:
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "element":
            if len(parts) != 3:
                raise ValueError(f"{path}: malformed element line {ln!r}")
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise ValueError(f"{path}: unsupported property line {ln!r}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    if count is None:
        raise ValueError(f"{path}: no vertex element in header")
    missing = [f for f in FIELDS if f not in dict(props)]
    if missing:
        raise ValueError(f"{path}: missing vertex properties {missing}")
    return count, props, end + len(b"end_header\n")


def load_splats(path) -> GaussianCloud:
    """Read a splat PLY into a cloud (rest centers = centers, F = I)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    count, props, offset = _parse_header(blob, path)
    dtype = np.dtype([(name, code) for name, code in props])
    expected = offset + count * dtype.itemsize
    if len(blob) < expected:
        raise ValueError(f"{path}: payload truncated "
                         f"({len(blob) - offset} of {count * dtype.itemsize} bytes)")
    rows = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)

    def col(name):
        return rows[name].astype(np.float64)

    centers = np.stack([col("x"), col("y"), col("z")], axis=1)
    logits = col("opacity")
    log_scales = np.stack([col(f"scale_{i}") for i in range(3)], axis=1)
    quats = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    f_dc = np.stack([col(f"f_dc_{i}") for i in range(3)], axis=1)

    for name, arr in (("position", centers), ("opacity", logits),
                      ("scale", log_scales), ("rotation", quats),
                      ("color", f_dc)):
        bad = ~np.isfinite(arr).all(axis=tuple(range(1, arr.ndim)))
        if bad.any():
            raise ValueError(
                f"{path}: vertex {int(np.argmax(bad))} has a non-finite {name}")
    norms = np.linalg.norm(quats, axis=1)
    if np.any(norms == 0.0):
        raise ValueError(f"{path}: vertex {int(np.argmax(norms == 0.0))} "
                         "has a zero quaternion")

    opacities = 1.0 / (1.0 + np.exp(-logits))
    covariances = compose_covariance(np.exp(log_scales), quats)
    colors = np.clip(0.5 + SH_DC * f_dc, 0.0, 1.0)
    return GaussianCloud.create(centers, opacities, covariances, colors)


def save_splats(cloud: GaussianCloud, path) -> None:
    """Write a cloud's world-space kernels as a splat PLY."""
    cloud.validate()
    n = len(cloud)
    scales, quats = decompose_covariance(cloud.world_covariances()) \
        if n else (np.zeros((0, 3)), np.zeros((0, 4)))
    sigma = np.clip(cloud.opacities, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        logits = np.clip(np.log(sigma) - np.log1p(-sigma),
                         -_LOGIT_CLIP, _LOGIT_CLIP)
        log_scales = np.clip(np.log(scales), -_LOGIT_CLIP, _LOGIT_CLIP)
    f_dc = (cloud.colors - 0.5) / SH_DC

    dtype = np.dtype([(name, "<f4") for name in FIELDS])
    rows = np.empty(n, dtype=dtype)
    rows["x"], rows["y"], rows["z"] = cloud.centers.T
    rows["opacity"] = logits
    for i in range(3):
        rows[f"scale_{i}"] = log_scales[:, i]
        rows[f"f_dc_{i}"] = f_dc[:, i]
    for i in range(4):
        rows[f"rot_{i}"] = quats[:, i]

    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}"]
    header += [f"property float {name}" for name in FIELDS]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rows.tobytes())
