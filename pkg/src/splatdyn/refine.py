"""Splat refinement against rendered supervision views.

Two losses drive a plain SGD loop over the raw splat parameters:

* a color loss on the single input view, L1 plus a structural-dissimilarity
  term, with gradients into every parameter group;
* a hard-depth loss over all views that carry a depth map.  Rendered and
  target depth are normalized per map (half patch-local, half global
  statistics), cut into patches, and penalized by the sum of per-patch
  L2 norms.  Only positions receive gradients from this loss: the shape
  parameters are detached inside the covariance and opacity/color do not
  enter the hard-depth render at all.

The depth term switches on late and runs on a cadence (every tenth epoch
after a burn-in by default) so color converges first; the learning rate
decays once, halfway through.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .gaussians import Camera, GaussianCloud
from .io import load_camera, read_pfm, read_png
from .metrics import dssim
from .render import DTYPE, composite, composite_hard_depth
from .rotation import decompose_covariance

# std-dev floor for map normalization, relative to the map's peak-to-peak
NORMALIZE_EPS = 1e-2

# base learning rates per parameter group; positions scale with scene extent.
# shape and opacity run cool: they only see the color loss, and letting them
# absorb a transient position error poisons the depth supervision
POSITION_LR = 2e-4
OPACITY_LR = 5e-3
SHAPE_LR = 1e-3
COLOR_LR = 2.5e-3

_LOGIT_CLIP = 40.0


@dataclass
class TrainSchedule:
    """Epoch budget and cadence constants for the refinement loop.

    Epochs are 1-indexed.  The learning rate is multiplied by
    ``decay_factor`` for every epoch after ``decay_epoch``; the hard-depth
    loss steps on epochs ``e >= hard_depth_start`` with
    ``e % hard_depth_every == 0``.
    """

    epochs: int = 3000
    decay_epoch: int = 1500
    decay_factor: float = 0.1
    hard_depth_start: int = 500
    hard_depth_every: int = 10
    patch_size: int = 8
    hard_delta: float = 0.99
    ssim_weight: float = 0.2
    depth_weight: float = 1.0

    def __post_init__(self):
        problems = []
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1, got {self.epochs}")
        if self.decay_epoch < 1:
            problems.append(f"decay_epoch must be >= 1, got {self.decay_epoch}")
        if not 0.0 < self.decay_factor <= 1.0:
            problems.append(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.hard_depth_start >= self.epochs:
            problems.append(
                f"hard_depth_start ({self.hard_depth_start}) must fall before "
                f"the last epoch ({self.epochs}), or depth never supervises")
        if self.hard_depth_every < 1:
            problems.append(f"hard_depth_every must be >= 1, got {self.hard_depth_every}")
        if self.patch_size < 1:
            problems.append(f"patch_size must be >= 1, got {self.patch_size}")
        if not 0.0 < self.hard_delta < 1.0:
            problems.append(f"hard_delta must be in (0, 1), got {self.hard_delta}")
        if self.ssim_weight < 0.0:
            problems.append(f"ssim_weight must be >= 0, got {self.ssim_weight}")
        if self.depth_weight < 0.0:
            problems.append(f"depth_weight must be >= 0, got {self.depth_weight}")
        if problems:
            raise ValueError("; ".join(problems))

    def lr_scale_at(self, epoch: int) -> float:
        return self.decay_factor if epoch > self.decay_epoch else 1.0

    def hard_depth_active(self, epoch: int) -> bool:
        return epoch >= self.hard_depth_start and epoch % self.hard_depth_every == 0


@dataclass
class SupervisionView:
    """One camera with its target image and/or depth map."""

    camera: Camera
    image: Optional[np.ndarray] = None   # (H, W, 3) in [0, 1]
    depth: Optional[np.ndarray] = None   # (H, W) hard depth
    is_input: bool = False


def _quat_to_matrix_torch(q: torch.Tensor) -> torch.Tensor:
    # torch twin of rotation.quat_to_matrix so gradients reach the quaternions
    norm = torch.linalg.vector_norm(q, dim=-1, keepdim=True)
    w, x, y, z = (q / norm).unbind(-1)
    row0 = torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1)
    row1 = torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1)
    row2 = torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1)
    return torch.stack([row0, row1, row2], dim=-2)


class SplatParameters:
    """Raw optimization variables for a cloud, stored as torch leaves.

    positions (N, 3), opacity logits (N,), log scales (N, 3), quaternions
    (N, 4) and colors (N, 3).  Covariances rebuild as R diag(exp(2 s)) R^T.
    """

    def __init__(self, positions, opacity_logits, log_scales, quats, colors):
        def leaf(a):
            t = torch.as_tensor(np.asarray(a), dtype=DTYPE).clone()
            t.requires_grad_(True)
            return t
        self.positions = leaf(positions)
        self.opacity_logits = leaf(opacity_logits)
        self.log_scales = leaf(log_scales)
        self.quats = leaf(quats)
        self.colors = leaf(colors)

    @classmethod
    def from_cloud(cls, cloud: GaussianCloud) -> "SplatParameters":
        cloud.validate()
        scales, quats = decompose_covariance(cloud.world_covariances())
        sigma = np.clip(cloud.opacities, 0.0, 1.0)
        with np.errstate(divide="ignore"):
            logits = np.clip(np.log(sigma) - np.log1p(-sigma), -_LOGIT_CLIP, _LOGIT_CLIP)
            log_scales = np.clip(np.log(scales), -_LOGIT_CLIP, _LOGIT_CLIP)
        return cls(cloud.centers, logits, log_scales, quats, cloud.colors)

    def opacities(self) -> torch.Tensor:
        return torch.sigmoid(self.opacity_logits)

    def covariances(self, *, detach_shape: bool = False) -> torch.Tensor:
        quats = self.quats.detach() if detach_shape else self.quats
        log_scales = self.log_scales.detach() if detach_shape else self.log_scales
        rot = _quat_to_matrix_torch(quats)
        s2 = torch.exp(2.0 * log_scales)
        return torch.einsum("nij,nj,nkj->nik", rot, s2, rot)

    def to_cloud(self) -> GaussianCloud:
        """Export as an undeformed cloud (rest centers = centers, F = I)."""
        with torch.no_grad():
            centers = self.positions.numpy().copy()
            opacities = self.opacities().numpy().copy()
            covariances = self.covariances().numpy().copy()
            colors = self.colors.clamp(0.0, 1.0).numpy().copy()
        return GaussianCloud.create(centers, opacities, covariances, colors)

    def all_tensors(self) -> dict:
        return {"positions": self.positions, "opacity_logits": self.opacity_logits,
                "log_scales": self.log_scales, "quats": self.quats,
                "colors": self.colors}


def scene_extent(centers) -> float:
    """Largest axis-aligned span of the centers; 1 if degenerate."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    if centers.shape[0] == 0:
        return 1.0
    span = float(np.max(np.ptp(centers, axis=0)))
    return span if span > 0.0 else 1.0


def make_optimizer(params: SplatParameters, extent: float) -> torch.optim.SGD:
    groups = [
        {"params": [params.positions], "lr": POSITION_LR * extent},
        {"params": [params.opacity_logits], "lr": OPACITY_LR},
        {"params": [params.log_scales, params.quats], "lr": SHAPE_LR},
        {"params": [params.colors], "lr": COLOR_LR},
    ]
    return torch.optim.SGD(groups)


def patchify(x: torch.Tensor, patch_size: int) -> torch.Tensor:
    """Cut an (H, W) map into (P, k, k) patches, row-major.

    Maps whose sides are not multiples of k are replicate-padded on the
    bottom/right first.
    """
    x = torch.as_tensor(x, dtype=DTYPE)
    if x.ndim != 2:
        raise ValueError(f"expected an (H, W) map, got shape {tuple(x.shape)}")
    k = int(patch_size)
    h, w = x.shape
    pad_h = (-h) % k
    pad_w = (-w) % k
    if pad_h or pad_w:
        x = torch.nn.functional.pad(x[None, None], (0, pad_w, 0, pad_h),
                                    mode="replicate")[0, 0]
    hh, ww = x.shape
    return x.reshape(hh // k, k, ww // k, k).permute(0, 2, 1, 3).reshape(-1, k, k)


def unpatchify(patches: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Inverse of patchify: reassemble (P, k, k) patches and crop padding."""
    p, k, k2 = patches.shape
    if k != k2:
        raise ValueError(f"patches must be square, got {k}x{k2}")
    rows = -(-height // k)
    cols = -(-width // k)
    if p != rows * cols:
        raise ValueError(f"{p} patches cannot tile a {height}x{width} map "
                         f"with {rows}x{cols} tiles")
    full = patches.reshape(rows, cols, k, k).permute(0, 2, 1, 3)
    return full.reshape(rows * k, cols * k)[:height, :width]


def _safe_std(var: torch.Tensor) -> torch.Tensor:
    # sqrt with a flat clamp below so constant regions backprop zeros, not NaN
    return torch.sqrt(torch.clamp(var, min=torch.finfo(var.dtype).tiny))


def normalize_map(x, patch_size: int, eps: float = NORMALIZE_EPS) -> torch.Tensor:
    """Map normalization: half patch-local z-score, half global z-score.

    N(x) = 0.5 (x - mu_patch) / (sigma_patch + eps ptp)
         + 0.5 (x - mu_global) / (sigma_global + eps ptp)

    with population standard deviations and ptp the map's full value range,
    so the floor scales with the map: nearly flat patches (kernel tails)
    stay small instead of being amplified into dominant noise, and the
    output is exactly invariant to positive-gain affine rescaling.  An
    exactly constant slice (patch or whole map) contributes exactly zero:
    the mean subtraction would otherwise leave summation-rounding noise.
    """
    x = torch.as_tensor(x, dtype=DTYPE)
    h, w = x.shape
    floor = eps * (x.amax() - x.amin())
    patches = patchify(x, patch_size)
    const_p = torch.amax(patches, dim=(-2, -1), keepdim=True) \
        == torch.amin(patches, dim=(-2, -1), keepdim=True)
    mu_p = patches.mean(dim=(-2, -1), keepdim=True)
    sd_p = _safe_std(patches.var(dim=(-2, -1), unbiased=False, keepdim=True))
    local_patches = torch.where(const_p, torch.zeros_like(patches),
                                0.5 * (patches - mu_p) / (sd_p + floor))
    local = unpatchify(local_patches, h, w)
    mu_g = x.mean()
    sd_g = _safe_std(x.var(unbiased=False))
    glob = torch.where(x.amax() == x.amin(), torch.zeros_like(x),
                       0.5 * (x - mu_g) / (sd_g + floor))
    return local + glob


def _patch_norms(diff: torch.Tensor, patch_size: int) -> torch.Tensor:
    patches = patchify(diff, patch_size)
    sumsq = patches.pow(2).sum(dim=(-2, -1))
    # gradient-safe L2: exact zeros stay zero with zero gradient
    return torch.where(sumsq > 0.0, torch.sqrt(sumsq.clamp_min(torch.finfo(sumsq.dtype).tiny)), sumsq)


def hard_depth_loss(params: SplatParameters, views: Sequence[SupervisionView],
                    schedule: TrainSchedule) -> torch.Tensor:
    """Sum of per-patch L2 norms between normalized hard depths, all depth views.

    Shape parameters are detached, so only positions receive gradients.
    """
    cov = params.covariances(detach_shape=True)
    total = torch.zeros((), dtype=DTYPE)
    for view in views:
        if view.depth is None:
            continue
        rendered = composite_hard_depth(params.positions, cov, view.camera,
                                        delta=schedule.hard_delta)
        target = torch.as_tensor(np.asarray(view.depth), dtype=DTYPE)
        if target.shape != rendered.shape:
            raise ValueError(f"depth map shape {tuple(target.shape)} does not "
                             f"match the camera ({tuple(rendered.shape)})")
        diff = normalize_map(rendered, schedule.patch_size) \
            - normalize_map(target, schedule.patch_size)
        total = total + _patch_norms(diff, schedule.patch_size).sum()
    return schedule.depth_weight * total


def color_loss(params: SplatParameters, view: SupervisionView,
               schedule: TrainSchedule) -> torch.Tensor:
    """L1 plus weighted structural dissimilarity against the view's image."""
    if view.image is None:
        raise ValueError("color loss requires a view with an image")
    rendered, _, _ = composite(params.positions, params.covariances(),
                               params.opacities(), params.colors, view.camera)
    target = torch.as_tensor(np.asarray(view.image), dtype=DTYPE)
    if target.shape != rendered.shape:
        raise ValueError(f"image shape {tuple(target.shape)} does not match "
                         f"the camera ({tuple(rendered.shape)})")
    loss = (rendered - target).abs().mean()
    if schedule.ssim_weight > 0.0:
        loss = loss + schedule.ssim_weight * dssim(rendered, target)
    return loss


def _input_view(views: Sequence[SupervisionView]) -> SupervisionView:
    inputs = [v for v in views if v.is_input]
    if len(inputs) != 1:
        raise ValueError(f"expected exactly one input view, got {len(inputs)}")
    if inputs[0].image is None:
        raise ValueError("the input view has no image")
    return inputs[0]


def optimize(cloud: GaussianCloud, views: Sequence[SupervisionView],
             schedule: Optional[TrainSchedule] = None):
    """Refine a cloud against its supervision views.

    Runs the color step every epoch on the input view and the hard-depth
    step on the schedule's cadence over every view that has a depth map.
    Returns (refined cloud, trace), where the trace holds one record per
    epoch: epoch, lr_scale, color_loss, depth_loss (None off-cadence).
    """
    schedule = schedule or TrainSchedule()
    input_view = _input_view(views)
    depth_views = [v for v in views if v.depth is not None]
    params = SplatParameters.from_cloud(cloud)
    optimizer = make_optimizer(params, scene_extent(cloud.centers))
    base_lrs = [group["lr"] for group in optimizer.param_groups]

    def check(value: torch.Tensor, what: str, epoch: int) -> float:
        if not bool(torch.isfinite(value)):
            raise RuntimeError(f"refinement diverged: non-finite {what} "
                               f"at epoch {epoch}")
        return float(value.detach())

    trace = []
    for epoch in range(1, schedule.epochs + 1):
        scale = schedule.lr_scale_at(epoch)
        for group, base in zip(optimizer.param_groups, base_lrs):
            group["lr"] = base * scale

        optimizer.zero_grad()
        closs = color_loss(params, input_view, schedule)
        check(closs, "color loss", epoch)
        if closs.requires_grad:  # an all-background render has no grad path
            closs.backward()
            optimizer.step()

        dloss = None
        if schedule.hard_depth_active(epoch) and depth_views:
            optimizer.zero_grad()
            dval = hard_depth_loss(params, depth_views, schedule)
            dloss = check(dval, "hard-depth loss", epoch)
            if dval.requires_grad:
                dval.backward()
                optimizer.step()

        trace.append({"epoch": epoch, "lr_scale": scale,
                      "color_loss": float(closs.detach()),
                      "depth_loss": dloss})
    return params.to_cloud(), trace


def load_views(directory) -> list:
    """Load supervision views from ``view_*/`` subdirectories.

    Each subdirectory holds camera.json plus optional image.png and
    depth.pfm; a view with no depth map is kept for color but warns that
    it cannot supervise depth.  The view at azimuth 0 is the input view;
    exactly one must exist and it must carry an image.
    """
    root = Path(directory)
    subdirs = sorted(p for p in root.iterdir()
                     if p.is_dir() and p.name.startswith("view_"))
    if not subdirs:
        raise ValueError(f"{root}: no view_* subdirectories")
    views = []
    for sub in subdirs:
        camera = load_camera(sub / "camera.json")
        image_path = sub / "image.png"
        depth_path = sub / "depth.pfm"
        image = read_png(image_path) if image_path.exists() else None
        depth = read_pfm(depth_path).astype(np.float64) if depth_path.exists() else None
        if depth is None:
            warnings.warn(f"{sub.name}: no depth.pfm, view cannot supervise depth",
                          RuntimeWarning, stacklevel=2)
        views.append(SupervisionView(camera=camera, image=image, depth=depth,
                                     is_input=camera.azimuth == 0.0))
    _input_view(views)
    return views
