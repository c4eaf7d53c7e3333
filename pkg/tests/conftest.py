"""Shared fixtures: random clouds, cameras, SPD matrices."""

import numpy as np
import pytest

from splatdyn.gaussians import Camera, GaussianCloud


def random_spd(rng, dim=3, scale=1.0):
    a = rng.normal(size=(dim, dim))
    return scale * (a @ a.T + dim * np.eye(dim))


def random_spd_batch(rng, n, dim=3, scale=1.0):
    return np.stack([random_spd(rng, dim, scale) for _ in range(n)])


def random_cloud(rng, n, *, center=(0.0, 0.0, 2.5), spread=0.5, cov_scale=2e-3,
                 opacity_range=(0.2, 0.95)):
    centers = np.asarray(center) + rng.uniform(-spread, spread, size=(n, 3))
    return GaussianCloud.create(
        centers=centers,
        opacities=rng.uniform(*opacity_range, size=n),
        covariances=random_spd_batch(rng, n, scale=cov_scale),
        colors=rng.uniform(0.0, 1.0, size=(n, 3)),
    )


def identity_camera(width=32, height=32, f=40.0, cx=None, cy=None):
    """Camera at the origin looking down +z with R = I."""
    return Camera(position=np.zeros(3), rotation=np.eye(3), fx=f, fy=f,
                  cx=(width - 1) / 2.0 if cx is None else cx,
                  cy=(height - 1) / 2.0 if cy is None else cy,
                  width=width, height=height)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
