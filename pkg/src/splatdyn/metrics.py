"""Score-table normalization and image similarity.

Evaluation scores arrive as a method x scene table; comparisons across
scenes with different score scales go through per-scene z-score
normalization with the population standard deviation.  Image similarity
is SSIM with the usual 11x11 Gaussian window (sigma 1.5), computed on
valid windows only; the structural dissimilarity (1 - SSIM) / 2 doubles
as a differentiable training loss, so the core runs on torch tensors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class ScoreTable:
    """Methods down the rows, scenes across the columns."""

    methods: list
    scenes: list
    values: np.ndarray  # (M, S)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("scores must be a 2-d array")
        if self.values.shape != (len(self.methods), len(self.scenes)):
            raise ValueError(
                f"score shape {self.values.shape} does not match "
                f"{len(self.methods)} methods x {len(self.scenes)} scenes")

    def copy(self) -> "ScoreTable":
        return ScoreTable(list(self.methods), list(self.scenes),
                          self.values.copy())


def zscore_columns(values: np.ndarray, scenes=None) -> np.ndarray:
    """Column-wise (x - mean) / population sigma.

    A constant column has no spread to normalize by; that raises, naming
    the scene when labels are provided.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("scores must be a 2-d array")
    spread = np.ptp(values, axis=0)
    if np.any(spread == 0.0):
        col = int(np.argmax(spread == 0.0))
        name = scenes[col] if scenes is not None else f"column {col}"
        raise ValueError(f"scene {name!r}: scores are constant, "
                         "z-score normalization is undefined")
    mean = values.mean(axis=0)
    sigma = np.sqrt(((values - mean) ** 2).mean(axis=0))
    return (values - mean) / sigma


def zscore_normalize(table: ScoreTable) -> ScoreTable:
    """Per-scene z-scores of a score table (population standard deviation)."""
    return ScoreTable(list(table.methods), list(table.scenes),
                      zscore_columns(table.values, table.scenes))


def write_scores(table: ScoreTable, path) -> None:
    """CSV with a ``method`` label column and one column per scene."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", *table.scenes])
        for name, row in zip(table.methods, table.values):
            writer.writerow([name, *(repr(float(v)) for v in row)])


def read_scores(path) -> ScoreTable:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "method":
        raise ValueError(f"{path}: expected a header starting with 'method'")
    scenes = rows[0][1:]
    if not scenes:
        raise ValueError(f"{path}: no scene columns")
    methods, values = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(scenes) + 1:
            raise ValueError(f"{path}: line {r} has {len(row)} cells, "
                             f"expected {len(scenes) + 1}")
        methods.append(row[0])
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError:
            raise ValueError(f"{path}: line {r} holds a non-numeric score") from None
    return ScoreTable(methods, scenes, np.asarray(values, dtype=np.float64))


def _gaussian_window(size: int, sigma: float, dtype, device) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def _as_channel_stack(image: torch.Tensor) -> torch.Tensor:
    """(H, W) or (H, W, C) -> (C, 1, H, W) for depthwise filtering."""
    if image.ndim == 2:
        return image.unsqueeze(0).unsqueeze(0)
    if image.ndim == 3:
        return image.permute(2, 0, 1).unsqueeze(1)
    raise ValueError(f"expected an (H, W) or (H, W, C) image, got shape "
                     f"{tuple(image.shape)}")


def ssim_map(a: torch.Tensor, b: torch.Tensor, *, data_range: float = 1.0,
             window_size: int = SSIM_WINDOW,
             sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Per-window SSIM over valid positions, shape (C, H - k + 1, W - k + 1)."""
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    x = _as_channel_stack(a)
    y = _as_channel_stack(b)
    if x.shape[-2] < window_size or x.shape[-1] < window_size:
        raise ValueError(f"image smaller than the {window_size}x{window_size} "
                         "similarity window")
    w = _gaussian_window(window_size, sigma, x.dtype, x.device)
    w = w.reshape(1, 1, window_size, window_size)
    mu_x = F.conv2d(x, w)
    mu_y = F.conv2d(y, w)
    var_x = F.conv2d(x * x, w) - mu_x * mu_x
    var_y = F.conv2d(y * y, w) - mu_y * mu_y
    cov = F.conv2d(x * y, w) - mu_x * mu_y
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return (num / den).squeeze(1)


def _to_tensor_pair(a, b):
    if torch.is_tensor(a) or torch.is_tensor(b):
        return torch.as_tensor(a), torch.as_tensor(b), True
    return (torch.as_tensor(np.asarray(a, dtype=np.float64)),
            torch.as_tensor(np.asarray(b, dtype=np.float64)), False)


def ssim(a, b, *, data_range: float = 1.0) -> "torch.Tensor | float":
    """Mean SSIM; returns a tensor for tensor inputs, a float otherwise."""
    x, y, keep = _to_tensor_pair(a, b)
    value = ssim_map(x, y, data_range=data_range).mean()
    return value if keep else float(value)


def dssim(a, b, *, data_range: float = 1.0) -> "torch.Tensor | float":
    """Structural dissimilarity (1 - SSIM) / 2, in [0, 1]."""
    x, y, keep = _to_tensor_pair(a, b)
    value = (1.0 - ssim_map(x, y, data_range=data_range).mean()) / 2.0
    return value if keep else float(value)
