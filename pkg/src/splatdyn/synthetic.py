"""Synthetic demo scene: a lattice cube of Gaussian kernels plus its views.

The cube is the repo's end-to-end fixture: 8x8x8 = 512 kernels with a smooth
positional color gradient, four turntable supervision views rendered from it
(the front view carries the color image, every view carries hard depth), a
gradient background for compositing, and a scene config wiring it all up.
Everything is deterministic, so pipelines built on it can be compared
bit-for-bit across runs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import CameraRig
from .gaussians import GaussianCloud
from .io import save_camera, save_splats, write_pfm, write_png
from .render import render, render_hard_depth


def cube_cloud(side: int = 8, *, extent: float = 0.4, opacity: float = 0.9,
               sigma_scale: float = 0.55, center=(0.0, 0.0, 0.0)) -> GaussianCloud:
    """Isotropic kernels on a side^3 lattice spanning ``extent`` per axis.

    Kernel radius is ``sigma_scale`` times the lattice spacing, enough
    overlap to render as a solid block without washing out the color
    gradient (colors sweep 0.15..0.85 per axis, safely inside the
    activation range the splat file format can invert).
    """
    if side < 2:
        raise ValueError(f"side must be >= 2, got {side}")
    if extent <= 0.0:
        raise ValueError(f"extent must be positive, got {extent}")
    axis = np.linspace(-extent / 2.0, extent / 2.0, side)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    centers = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    centers += np.asarray(center, dtype=np.float64)
    spacing = extent / (side - 1)
    sigma = sigma_scale * spacing
    n = centers.shape[0]
    covariances = np.tile(sigma ** 2 * np.eye(3), (n, 1, 1))
    colors = 0.15 + 0.7 * (centers - centers.min(axis=0)) / extent
    return GaussianCloud.create(centers, np.full(n, opacity), covariances, colors)


def write_views(cloud: GaussianCloud, rig: CameraRig, directory, *,
                delta: float = 0.99) -> list:
    """Render the rig's four supervision views into view_0 .. view_3.

    The azimuth-0 view gets the color image (it is the input view); every
    view gets a hard depth map and its camera.
    """
    directory = Path(directory)
    paths = []
    for i, camera in enumerate(rig.supervision_cameras()):
        sub = directory / f"view_{i}"
        sub.mkdir(parents=True, exist_ok=True)
        save_camera(camera, sub / "camera.json")
        if camera.azimuth == 0.0:
            write_png(render(cloud, camera).color, sub / "image.png")
        write_pfm(render_hard_depth(cloud, camera, delta=delta),
                  sub / "depth.pfm")
        paths.append(sub)
    return paths


def background_image(width: int = 64, height: int = 64) -> np.ndarray:
    """A smooth diagonal gradient, distinct from the cube's color range."""
    u = np.linspace(0.0, 1.0, width)[None, :]
    v = np.linspace(0.0, 1.0, height)[:, None]
    return np.stack([0.1 + 0.5 * u + 0.0 * v,
                     0.2 + 0.3 * v + 0.0 * u,
                     0.6 - 0.25 * u * v], axis=-1).clip(0.0, 1.0)


def write_demo_scene(directory, *, side: int = 8, frames: int = 24,
                     fps: float = 24.0, epochs: int = 50,
                     loads=(), colliders=(), material=None,
                     grid=None) -> Path:
    """Write the full demo fixture; returns the scene config path.

    ``loads``, ``colliders``, ``material`` and ``grid`` are raw config
    entries (JSON-shaped) copied verbatim into the scene file; material
    defaults to a soft elastic preset and the grid to a 1 m cube around
    the origin.
    """
    if epochs < 2:
        raise ValueError("the demo schedule needs at least 2 epochs so the "
                         "depth loss can run")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rig = CameraRig(radius=1.5, fx=120.0, width=64, height=64)
    cloud = cube_cloud(side)
    save_splats(cloud, directory / "cube.ply")
    write_views(cloud, rig, directory / "views")
    write_png(background_image(rig.width, rig.height),
              directory / "background.png")
    hard_depth_start = max(1, min(10, epochs - 1))
    scene = {
        "splats": "cube.ply",
        "output": "out",
        "views": "views",
        "material": material if material is not None
        else {"preset": "elastic", "youngs_modulus": 5e4},
        "loads": list(loads),
        "grid": grid if grid is not None
        else {"origin": [-0.5, -0.5, -0.5], "spacing": 0.05,
              "dims": [21, 21, 21]},
        "colliders": list(colliders),
        "simulation": {"frames": frames, "fps": fps},
        "cameras": {"radius": rig.radius, "fx": rig.fx,
                    "width": rig.width, "height": rig.height},
        "optimization": {"epochs": epochs,
                         "decay_epoch": max(1, epochs // 2),
                         "hard_depth_start": hard_depth_start,
                         "hard_depth_every": 10},
        "propagation": {"keyframe_interval": 5, "seed": 0},
        "blend": {"background": "background.png"},
    }
    path = directory / "scene.json"
    path.write_text(json.dumps(scene, indent=2) + "\n")
    return path
