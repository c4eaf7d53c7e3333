"""Camera persistence: a small JSON schema.

Fields: position (3 floats), rotation (unit quaternion, w first, mapping
world to camera), fx, fy, cx, cy, width, height, and an optional azimuth
(radians, defaults to 0).
"""

from __future__ import annotations

import json

import numpy as np

from ..gaussians import Camera
from ..rotation import matrix_to_quat, quat_to_matrix

_REQUIRED = ("position", "rotation", "fx", "fy", "cx", "cy", "width", "height")


def save_camera(camera: Camera, path) -> None:
    quat = matrix_to_quat(camera.rotation)
    payload = {
        "position": [float(v) for v in camera.position],
        "rotation": [float(v) for v in quat],
        "fx": float(camera.fx),
        "fy": float(camera.fy),
        "cx": float(camera.cx),
        "cy": float(camera.cy),
        "width": int(camera.width),
        "height": int(camera.height),
        "azimuth": float(camera.azimuth),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_camera(path) -> Camera:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as err:
            raise ValueError(f"{path}: invalid JSON ({err})") from None
    missing = [k for k in _REQUIRED if k not in payload]
    if missing:
        raise ValueError(f"{path}: camera JSON is missing {missing}")
    quat = np.asarray(payload["rotation"], dtype=np.float64)
    if quat.shape != (4,):
        raise ValueError(f"{path}: rotation must be a 4-element quaternion")
    return Camera(
        position=np.asarray(payload["position"], dtype=np.float64),
        rotation=quat_to_matrix(quat),
        fx=float(payload["fx"]),
        fy=float(payload["fy"]),
        cx=float(payload["cx"]),
        cy=float(payload["cy"]),
        width=int(payload["width"]),
        height=int(payload["height"]),
        azimuth=float(payload.get("azimuth", 0.0)),
    )
