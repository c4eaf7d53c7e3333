"""Depth-sorted alpha compositing of projected Gaussian kernels.

Per pixel p, with kernels sorted front-to-back by Euclidean distance to the
camera center and alpha_n = opacity_n * G_n(p):

    color(p) = sum_n alpha_n c_n prod_{j<n} (1 - alpha_j)
    depth(p) = sum_n ||x_n - o|| w_n,   w_n = alpha_n prod_{j<n} (1 - alpha_j)
    alpha(p) = sum_n w_n

The hard-depth variant replaces alpha_n by a fixed visibility delta, so the
weight of the rank-p kernel at a pixel is delta (1 - delta)^(p-1) G(p):
only the nearest few kernels contribute regardless of their opacities.

Everything runs in float64 torch so the same code path serves plain
rendering (no_grad) and gradient-based refinement. Outputs are independent
of kernel input order (stable depth sort, ties by kernel index) and of
thread count (sequential kernel loop).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .gaussians import Camera, GaussianCloud, Z_NEAR

DTYPE = torch.float64

# Isotropic pixel-space floor added to projected covariances before
# inversion; keeps sub-pixel footprints well conditioned.
COV2D_FLOOR = 0.3

# Per-pixel cutoffs: kernels with G below MIN_WEIGHT are skipped, and a
# pixel stops accepting contributions once its transmittance drops below
# MIN_TRANSMITTANCE. Both are part of the compositing definition here;
# pass 0.0 to recover the exact untruncated sums.
MIN_WEIGHT = 1e-4
MIN_TRANSMITTANCE = 1e-4


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    alpha: np.ndarray  # (H, W)


def _tensor(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a), dtype=DTYPE)


def project_torch(centers: torch.Tensor, world_cov: torch.Tensor, camera: Camera):
    """Torch projection of kernel centers/covariances to the image plane.

    Returns (means2d (N,2), cov2d (N,2,2), dist (N,), in_front (N,) bool).
    """
    rot = _tensor(camera.rotation)
    pos = _tensor(camera.position)
    cam = (centers - pos) @ rot.T
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    in_front = z > Z_NEAR
    zs = torch.where(in_front, z, torch.ones_like(z))  # keep grads finite for culled rows
    means = torch.stack([camera.fx * x / zs + camera.cx,
                         camera.fy * y / zs + camera.cy], dim=-1)
    n = centers.shape[0]
    jac = torch.zeros((n, 2, 3), dtype=DTYPE)
    jac[:, 0, 0] = camera.fx / zs
    jac[:, 0, 2] = -camera.fx * x / zs ** 2
    jac[:, 1, 1] = camera.fy / zs
    jac[:, 1, 2] = -camera.fy * y / zs ** 2
    jw = jac @ rot
    cov2d = jw @ world_cov @ jw.transpose(1, 2)
    dist = torch.linalg.norm(centers - pos, dim=-1)
    return means, cov2d, dist, in_front


def _depth_order(dist: torch.Tensor, in_front: torch.Tensor) -> list[int]:
    idx = torch.nonzero(in_front, as_tuple=False).reshape(-1)
    if idx.numel() == 0:
        return []
    order = torch.argsort(dist[idx], stable=True)
    return [int(i) for i in idx[order]]


def _footprint(cov2d_i: torch.Tensor, mean_i: torch.Tensor, cutoff_radius: float,
               width: int, height: int):
    """Conic of the floored 2x2 covariance plus the clipped pixel bbox."""
    c00 = cov2d_i[0, 0] + COV2D_FLOOR
    c01 = cov2d_i[0, 1]
    c11 = cov2d_i[1, 1] + COV2D_FLOOR
    det = c00 * c11 - c01 * c01
    ia, ib, ic = c11 / det, -c01 / det, c00 / det
    mid = float((c00 + c11).detach()) / 2.0
    dd = float(det.detach())
    lam_max = mid + math.sqrt(max(mid * mid - dd, 0.0))
    radius = cutoff_radius * math.sqrt(max(lam_max, 0.0))
    mu = float(mean_i[0].detach()), float(mean_i[1].detach())
    if not (math.isfinite(mu[0]) and math.isfinite(mu[1])):
        return None
    if math.isfinite(radius):
        u0 = max(0, int(math.ceil(mu[0] - radius)))
        u1 = min(width, int(math.floor(mu[0] + radius)) + 1)
        v0 = max(0, int(math.ceil(mu[1] - radius)))
        v1 = min(height, int(math.floor(mu[1] + radius)) + 1)
    else:
        u0, u1, v0, v1 = 0, width, 0, height
    if u0 >= u1 or v0 >= v1:
        return None
    return (ia, ib, ic), (u0, u1, v0, v1)


def _gaussian_patch(conic, bbox, mean_i, ucoord, vcoord):
    ia, ib, ic = conic
    u0, u1, v0, v1 = bbox
    du = ucoord[u0:u1] - mean_i[0]
    dv = vcoord[v0:v1] - mean_i[1]
    q = (ia * du * du).unsqueeze(0) + (ic * dv * dv).unsqueeze(1) \
        + 2.0 * ib * dv.unsqueeze(1) * du.unsqueeze(0)
    return torch.exp(-0.5 * q)


def composite(centers, world_cov, opacities, colors, camera: Camera, *,
              min_weight: float = MIN_WEIGHT,
              min_transmittance: float = MIN_TRANSMITTANCE):
    """Front-to-back compositing. Inputs are torch tensors; returns torch
    (color (H,W,3), depth (H,W), alpha (H,W)) so gradients can flow."""
    h, w = camera.height, camera.width
    color = torch.zeros((h, w, 3), dtype=DTYPE)
    depth = torch.zeros((h, w), dtype=DTYPE)
    alpha = torch.zeros((h, w), dtype=DTYPE)
    trans = torch.ones((h, w), dtype=DTYPE)
    means, cov2d, dist, in_front = project_torch(centers, world_cov, camera)
    cutoff_radius = math.sqrt(-2.0 * math.log(min_weight)) if min_weight > 0.0 else math.inf
    ucoord = torch.arange(w, dtype=DTYPE)
    vcoord = torch.arange(h, dtype=DTYPE)
    for i in _depth_order(dist, in_front):
        fp = _footprint(cov2d[i], means[i], cutoff_radius, w, h)
        if fp is None:
            continue
        conic, bbox = fp
        u0, u1, v0, v1 = bbox
        g = _gaussian_patch(conic, bbox, means[i], ucoord, vcoord)
        t_cur = trans[v0:v1, u0:u1].clone()
        active = (g >= min_weight) & (t_cur >= min_transmittance)
        if not bool(active.any()):
            continue
        gate = active.to(DTYPE)
        a = opacities[i] * g
        contrib = t_cur * a * gate
        color[v0:v1, u0:u1] += contrib.unsqueeze(-1) * colors[i]
        depth[v0:v1, u0:u1] += contrib * dist[i]
        alpha[v0:v1, u0:u1] += contrib
        trans[v0:v1, u0:u1] = t_cur * (1.0 - a * gate)
    return color, depth, alpha


def composite_hard_depth(centers, world_cov, camera: Camera, *,
                         delta: float = 0.99, include_opacity: bool = False,
                         opacities=None, min_weight: float = MIN_WEIGHT) -> torch.Tensor:
    """Hard depth: per pixel the rank-p overlapping kernel gets weight
    delta (1 - delta)^(p-1) G(p), optionally scaled by its opacity.

    Rank counts kernels whose footprint reaches the pixel (G >= min_weight),
    nearest first. Differentiable w.r.t. centers and covariances.
    """
    if include_opacity and opacities is None:
        raise ValueError("include_opacity requires opacities")
    h, w = camera.height, camera.width
    depth = torch.zeros((h, w), dtype=DTYPE)
    rank = torch.zeros((h, w), dtype=torch.int64)
    means, cov2d, dist, in_front = project_torch(centers, world_cov, camera)
    cutoff_radius = math.sqrt(-2.0 * math.log(min_weight)) if min_weight > 0.0 else math.inf
    ucoord = torch.arange(w, dtype=DTYPE)
    vcoord = torch.arange(h, dtype=DTYPE)
    one_minus = torch.tensor(1.0 - delta, dtype=DTYPE)
    for i in _depth_order(dist, in_front):
        fp = _footprint(cov2d[i], means[i], cutoff_radius, w, h)
        if fp is None:
            continue
        conic, bbox = fp
        u0, u1, v0, v1 = bbox
        g = _gaussian_patch(conic, bbox, means[i], ucoord, vcoord)
        active = g >= min_weight
        if not bool(active.any()):
            continue
        gate = active.to(DTYPE)
        r_cur = rank[v0:v1, u0:u1].clone()
        weight = delta * torch.pow(one_minus, r_cur.to(DTYPE)) * g * gate
        if include_opacity:
            weight = weight * opacities[i]
        depth[v0:v1, u0:u1] += weight * dist[i]
        rank[v0:v1, u0:u1] = r_cur + active.to(torch.int64)
    return depth


def _check_finite(cloud: GaussianCloud) -> None:
    if len(cloud) == 0:
        return
    for name in ("centers", "opacities", "covariances", "colors", "deformations"):
        arr = getattr(cloud, name)
        bad = ~np.isfinite(arr).reshape(len(cloud), -1).all(axis=1)
        if bad.any():
            raise ValueError(f"kernel {int(np.argmax(bad))}: non-finite {name}")


def render(cloud: GaussianCloud, camera: Camera, *,
           min_weight: float = MIN_WEIGHT,
           min_transmittance: float = MIN_TRANSMITTANCE) -> RenderOutput:
    """Render a cloud (world covariance F H F^T) to color/depth/alpha maps."""
    _check_finite(cloud)
    with torch.no_grad():
        color, depth, alpha = composite(
            _tensor(cloud.centers), _tensor(cloud.world_covariances()),
            _tensor(cloud.opacities), _tensor(cloud.colors), camera,
            min_weight=min_weight, min_transmittance=min_transmittance)
    return RenderOutput(color=color.numpy(), depth=depth.numpy(), alpha=alpha.numpy())


def render_hard_depth(cloud: GaussianCloud, camera: Camera, *, delta: float = 0.99,
                      include_opacity: bool = False,
                      min_weight: float = MIN_WEIGHT) -> np.ndarray:
    """Render the hard (visibility-truncated) depth map of a cloud."""
    _check_finite(cloud)
    with torch.no_grad():
        depth = composite_hard_depth(
            _tensor(cloud.centers), _tensor(cloud.world_covariances()), camera,
            delta=delta, include_opacity=include_opacity,
            opacities=_tensor(cloud.opacities) if include_opacity else None,
            min_weight=min_weight)
    return depth.numpy()
