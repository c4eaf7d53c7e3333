"""Gaussian kernel cloud data model, pinhole cameras, and perspective projection.

A kernel is an anisotropic 3D Gaussian with a rest covariance H (world
units squared), an opacity in [0, 1], an RGB color, and a deformation
gradient F tying it to its rest configuration. The world-space covariance
of a deformed kernel is F H F^T.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# Behind-camera cull threshold for the camera-frame z coordinate.
Z_NEAR = 1e-8


def _as_f64(a, shape_tail, name):
    arr = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    if arr.shape[1:] != shape_tail:
        raise ValueError(f"{name}: expected trailing shape {shape_tail}, got {arr.shape}")
    return arr


@dataclass
class GaussianCloud:
    """Struct-of-arrays collection of N Gaussian kernels."""

    centers: np.ndarray       # (N, 3) world positions x_k
    opacities: np.ndarray     # (N,) in [0, 1]
    covariances: np.ndarray   # (N, 3, 3) SPD rest covariance H_k
    colors: np.ndarray        # (N, 3) RGB in [0, 1]
    rest_centers: np.ndarray  # (N, 3) material-space centers X_k
    deformations: np.ndarray  # (N, 3, 3) per-kernel deformation gradient F_k

    @classmethod
    def create(cls, centers, opacities, covariances, colors) -> "GaussianCloud":
        """Build an undeformed cloud: rest centers = centers, F = I."""
        centers = _as_f64(centers, (3,), "centers")
        n = centers.shape[0]
        return cls(
            centers=centers,
            opacities=np.ascontiguousarray(np.asarray(opacities, dtype=np.float64)).reshape(n),
            covariances=_as_f64(covariances, (3, 3), "covariances"),
            colors=_as_f64(colors, (3,), "colors"),
            rest_centers=centers.copy(),
            deformations=np.tile(np.eye(3), (n, 1, 1)),
        )

    def __len__(self) -> int:
        return self.centers.shape[0]

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(*(getattr(self, f).copy() for f in (
            "centers", "opacities", "covariances", "colors", "rest_centers", "deformations")))

    def world_covariances(self) -> np.ndarray:
        """Deformed covariances F H F^T, (N, 3, 3)."""
        return np.einsum("nij,njk,nlk->nil", self.deformations, self.covariances,
                         self.deformations)

    def validate(self) -> None:
        """Check ranges, symmetry/SPD-ness, and orientation-preserving F.

        Raises ValueError naming the first offending kernel.
        """
        if len(self) == 0:
            return
        for name in ("centers", "opacities", "covariances", "colors",
                     "rest_centers", "deformations"):
            arr = getattr(self, name)
            bad = ~np.isfinite(arr).reshape(len(self), -1).all(axis=1)
            if bad.any():
                raise ValueError(f"kernel {int(np.argmax(bad))}: non-finite {name}")
        if np.any((self.opacities < 0.0) | (self.opacities > 1.0)):
            k = int(np.argmax((self.opacities < 0.0) | (self.opacities > 1.0)))
            raise ValueError(f"kernel {k}: opacity outside [0, 1]")
        if np.any((self.colors < 0.0) | (self.colors > 1.0)):
            k = int(np.argmax(((self.colors < 0.0) | (self.colors > 1.0)).any(axis=1)))
            raise ValueError(f"kernel {k}: color outside [0, 1]")
        asym = np.abs(self.covariances - np.swapaxes(self.covariances, 1, 2)).max(axis=(1, 2))
        scale = np.abs(self.covariances).max(axis=(1, 2)) + 1e-30
        if np.any(asym > 1e-8 * scale):
            raise ValueError(f"kernel {int(np.argmax(asym > 1e-8 * scale))}: covariance not symmetric")
        eig = np.linalg.eigvalsh(self.covariances)
        if np.any(eig[:, 0] <= 0.0):
            raise ValueError(f"kernel {int(np.argmax(eig[:, 0] <= 0.0))}: covariance not positive definite")
        det = np.linalg.det(self.deformations)
        if np.any(det <= 0.0):
            raise ValueError(f"kernel {int(np.argmax(det <= 0.0))}: deformation gradient has det <= 0")


@dataclass
class Camera:
    """Pinhole camera, OpenCV axes: x right, y down, z forward.

    ``rotation`` maps world to camera: x_cam = R @ (x_world - position).
    Pixel centers sit at integer coordinates; (cx, cy) is in the same frame.
    """

    position: np.ndarray   # (3,)
    rotation: np.ndarray   # (3, 3) world-to-camera
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    azimuth: float = 0.0   # radians, bookkeeping for turntable view sets

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-10:
            raise ValueError(f"camera rotation not orthonormal (deviation {err:.3e})")
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("camera focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("camera image size must be positive")

    @classmethod
    def look_at(cls, position, target, up=(0.0, 1.0, 0.0), *, fx, fy=None,
                cx=None, cy=None, width=64, height=64, azimuth=0.0) -> "Camera":
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        norm = np.linalg.norm(forward)
        if norm == 0.0:
            raise ValueError("camera position coincides with target")
        forward = forward / norm
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        rn = np.linalg.norm(right)
        if rn < 1e-12:
            raise ValueError("camera forward direction parallel to up")
        right /= rn
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        return cls(position=position, rotation=rot, fx=fx, fy=fy if fy is not None else fx,
                   cx=(width - 1) / 2.0 if cx is None else cx,
                   cy=(height - 1) / 2.0 if cy is None else cy,
                   width=width, height=height, azimuth=azimuth)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.position) @ self.rotation.T

    def project_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points to pixel coords. Returns ((M, 2) uv, (M,) camera z)."""
        cam = self.world_to_camera(points)
        z = cam[..., 2]
        uv = np.stack([self.fx * cam[..., 0] / z + self.cx,
                       self.fy * cam[..., 1] / z + self.cy], axis=-1)
        return uv, z


def azimuth_camera(index: int, *, radius: float, target=(0.0, 0.0, 0.0),
                   fx: float = 100.0, width: int = 64, height: int = 64) -> Camera:
    """Turntable camera ``index`` in {0, 1, 2, 3} at azimuth pi*index/2 around +y.

    Index 0 looks down -z from (0, 0, radius) toward the target.
    """
    theta = np.pi * index / 2.0
    target = np.asarray(target, dtype=np.float64)
    pos = target + radius * np.array([np.sin(theta), 0.0, np.cos(theta)])
    return Camera.look_at(pos, target, fx=fx, width=width, height=height, azimuth=theta)


@dataclass
class Splats2D:
    """Image-plane footprint of the visible subset of a cloud.

    Arrays are aligned; ``kernel_indices`` maps rows back to cloud kernels.
    ``covariances`` are the raw projected 2x2 covariances in pixel^2 (no
    pixel floor applied; compositing adds that before inversion).
    """

    means: np.ndarray           # (M, 2) pixel coords
    covariances: np.ndarray     # (M, 2, 2)
    depths: np.ndarray          # (M,) Euclidean distance ||x_k - o||
    kernel_indices: np.ndarray  # (M,) int


def projection_jacobian(cam_points: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """Local affine (first-order) Jacobian of the pinhole map at camera-frame points.

    Rows are d(u, v)/d(x_cam); shape (..., 2, 3).
    """
    cam_points = np.asarray(cam_points, dtype=np.float64)
    x, y, z = cam_points[..., 0], cam_points[..., 1], cam_points[..., 2]
    jac = np.zeros(cam_points.shape[:-1] + (2, 3), dtype=np.float64)
    jac[..., 0, 0] = fx / z
    jac[..., 0, 2] = -fx * x / z ** 2
    jac[..., 1, 1] = fy / z
    jac[..., 1, 2] = -fy * y / z ** 2
    return jac


def project(cloud: GaussianCloud, camera: Camera) -> tuple[Splats2D, np.ndarray]:
    """Project kernels to the image plane with the local affine approximation.

    Returns (splats, in_front) where ``in_front`` is an (N,) bool mask;
    kernels with camera-frame z <= Z_NEAR are excluded from ``splats``
    rather than raising.
    """
    cam = cloud.centers @ camera.rotation.T - (camera.rotation @ camera.position)
    in_front = cam[:, 2] > Z_NEAR
    idx = np.nonzero(in_front)[0]
    cam = cam[idx]
    world_cov = cloud.world_covariances()[idx]
    jac = projection_jacobian(cam, camera.fx, camera.fy) @ camera.rotation
    cov2d = jac @ world_cov @ np.swapaxes(jac, 1, 2)
    means = np.stack([camera.fx * cam[:, 0] / cam[:, 2] + camera.cx,
                      camera.fy * cam[:, 1] / cam[:, 2] + camera.cy], axis=-1)
    depths = np.linalg.norm(cloud.centers[idx] - camera.position, axis=1)
    return Splats2D(means=means, covariances=cov2d, depths=depths,
                    kernel_indices=idx), in_front
