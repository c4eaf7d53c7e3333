"""Compositing renderer vs a term-by-term loop oracle.

The oracle re-derives everything with plain per-pixel Python loops: pinhole
transform, affine Jacobian, 2x2 inversion by adjugate, front-to-back
accumulation with the same skip (G < min_weight) and termination
(transmittance < min_transmittance) rules.
"""

import numpy as np
import pytest
import torch

from splatdyn.gaussians import GaussianCloud
from splatdyn.render import (COV2D_FLOOR, composite, composite_hard_depth,
                             render, render_hard_depth)

from conftest import identity_camera, random_cloud


def oracle_project(cloud, camera):
    """Per-kernel projection items sorted front to back: (dist, k, mean, cov2d+floor)."""
    rot, origin = camera.rotation, camera.position
    world_cov = cloud.world_covariances()
    items = []
    for k in range(len(cloud)):
        local = rot @ (cloud.centers[k] - origin)
        if local[2] <= 1e-8:
            continue
        z = local[2]
        jac = np.array([[camera.fx / z, 0.0, -camera.fx * local[0] / z ** 2],
                        [0.0, camera.fy / z, -camera.fy * local[1] / z ** 2]]) @ rot
        cov = jac @ world_cov[k] @ jac.T + COV2D_FLOOR * np.eye(2)
        mean = np.array([camera.fx * local[0] / z + camera.cx,
                         camera.fy * local[1] / z + camera.cy])
        items.append((np.linalg.norm(cloud.centers[k] - origin), k, mean, cov))
    items.sort(key=lambda t: (t[0], t[1]))
    return items


def oracle_render(cloud, camera, min_weight=1e-4, min_transmittance=1e-4):
    h, w = camera.height, camera.width
    color = np.zeros((h, w, 3))
    depth = np.zeros((h, w))
    alpha = np.zeros((h, w))
    items = oracle_project(cloud, camera)
    for v in range(h):
        for u in range(w):
            trans = 1.0
            for dist, k, mean, cov in items:
                if trans < min_transmittance:
                    break
                det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
                dx, dy = u - mean[0], v - mean[1]
                g = np.exp(-0.5 * (cov[1, 1] / det * dx * dx
                                   + 2.0 * (-cov[0, 1] / det) * dx * dy
                                   + cov[0, 0] / det * dy * dy))
                if g < min_weight:
                    continue
                a = cloud.opacities[k] * g
                contrib = trans * a
                color[v, u] += contrib * cloud.colors[k]
                depth[v, u] += contrib * dist
                alpha[v, u] += contrib
                trans *= 1.0 - a
    return color, depth, alpha


def oracle_hard_depth(cloud, camera, delta, min_weight=1e-4, opacity=False):
    h, w = camera.height, camera.width
    depth = np.zeros((h, w))
    items = oracle_project(cloud, camera)
    for v in range(h):
        for u in range(w):
            rank = 0
            for dist, k, mean, cov in items:
                det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
                dx, dy = u - mean[0], v - mean[1]
                g = np.exp(-0.5 * (cov[1, 1] / det * dx * dx
                                   + 2.0 * (-cov[0, 1] / det) * dx * dy
                                   + cov[0, 0] / det * dy * dy))
                if g < min_weight:
                    continue
                weight = delta * (1.0 - delta) ** rank * g
                if opacity:
                    weight *= cloud.opacities[k]
                depth[v, u] += weight * dist
                rank += 1
    return depth


class TestAgainstOracle:
    def test_fifty_random_splats_match_loop_oracle(self, rng):
        cloud = random_cloud(rng, 50)
        camera = identity_camera(width=32, height=32, f=40.0)
        out = render(cloud, camera)
        color, depth, alpha = oracle_render(cloud, camera)
        assert np.abs(out.color - color).max() <= 1e-12
        assert np.abs(out.depth - depth).max() <= 1e-12
        assert np.abs(out.alpha - alpha).max() <= 1e-12

    def test_hard_depth_matches_loop_oracle(self, rng):
        cloud = random_cloud(rng, 20)
        camera = identity_camera(width=24, height=24, f=30.0)
        got = render_hard_depth(cloud, camera, delta=0.99)
        assert np.abs(got - oracle_hard_depth(cloud, camera, 0.99)).max() <= 1e-12

    def test_hard_depth_opacity_switch_matches_oracle(self, rng):
        cloud = random_cloud(rng, 12)
        camera = identity_camera(width=16, height=16, f=24.0)
        got = render_hard_depth(cloud, camera, delta=0.9, include_opacity=True)
        want = oracle_hard_depth(cloud, camera, 0.9, opacity=True)
        assert np.abs(got - want).max() <= 1e-12


class TestCompositingInvariants:
    def test_opaque_front_splat_occludes_exactly(self):
        camera = identity_camera(width=33, height=33, f=40.0)
        cloud = GaussianCloud.create(
            centers=[[0.0, 0.0, 2.0], [0.0, 0.0, 3.0]],
            opacities=[1.0, 1.0],
            covariances=np.stack([np.eye(3) * 4e-3] * 2),
            colors=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        )
        out = render(cloud, camera)
        c = int(camera.cy), int(camera.cx)
        # at the shared projected mean G = 1, alpha = 1: back splat contributes zero
        assert out.color[c][0] == 1.0
        assert out.color[c][1] == 0.0
        assert out.depth[c] == 2.0
        assert out.alpha[c] == 1.0

    def test_color_set_to_distance_reproduces_depth(self, rng):
        cloud = random_cloud(rng, 15)
        dist = np.linalg.norm(cloud.centers, axis=1)
        cloud.colors = np.repeat(dist[:, None], 3, axis=1)  # out of [0,1] by design
        camera = identity_camera(width=24, height=24, f=30.0)
        out = render(cloud, camera)
        for ch in range(3):
            assert np.abs(out.color[..., ch] - out.depth).max() <= 1e-12

    def test_empty_cloud_renders_zeros(self):
        cloud = GaussianCloud.create(np.zeros((0, 3)), np.zeros(0),
                                     np.zeros((0, 3, 3)), np.zeros((0, 3)))
        out = render(cloud, identity_camera())
        assert out.color.shape == (32, 32, 3)
        assert not out.color.any() and not out.depth.any() and not out.alpha.any()

    def test_kernel_order_permutation_is_bit_identical(self, rng):
        cloud = random_cloud(rng, 30)
        camera = identity_camera(width=24, height=24, f=30.0)
        base = render(cloud, camera)
        perm = rng.permutation(30)
        shuffled = GaussianCloud(
            cloud.centers[perm], cloud.opacities[perm], cloud.covariances[perm],
            cloud.colors[perm], cloud.rest_centers[perm], cloud.deformations[perm])
        out = render(shuffled, camera)
        assert np.array_equal(base.color, out.color)
        assert np.array_equal(base.depth, out.depth)
        assert np.array_equal(base.alpha, out.alpha)

    def test_nan_kernel_is_a_hard_error_naming_the_kernel(self, rng):
        cloud = random_cloud(rng, 6)
        cloud.centers[4, 0] = np.nan
        with pytest.raises(ValueError, match="kernel 4"):
            render(cloud, identity_camera())

    def test_depth_nonnegative_and_zero_where_alpha_zero(self, rng):
        cloud = random_cloud(rng, 10)
        out = render(cloud, identity_camera())
        assert (out.depth >= 0.0).all()
        assert not out.depth[out.alpha == 0.0].any()

    def test_alpha_equals_weight_sum_and_bounded(self, rng):
        cloud = random_cloud(rng, 25)
        out = render(cloud, identity_camera())
        assert (out.alpha <= 1.0 + 1e-12).all() and (out.alpha >= 0.0).all()


class TestHardDepth:
    def test_single_splat_hard_depth_is_delta_times_distance(self):
        camera = identity_camera(width=33, height=33, f=40.0)
        cloud = GaussianCloud.create([[0.0, 0.0, 2.0]], [0.37],
                                     [np.eye(3) * 4e-3], [[1, 1, 1]])
        got = render_hard_depth(cloud, camera, delta=0.99)
        c = int(camera.cy), int(camera.cx)
        # opacity plays no role by default; G = 1 at the projected mean
        assert got[c] == pytest.approx(0.99 * 2.0, abs=1e-14)

    def test_two_stacked_splats_geometric_weights(self):
        camera = identity_camera(width=33, height=33, f=40.0)
        cloud = GaussianCloud.create(
            [[0.0, 0.0, 2.0], [0.0, 0.0, 3.0]], [1.0, 1.0],
            np.stack([np.eye(3) * 4e-3] * 2), [[1, 0, 0], [0, 1, 0]])
        got = render_hard_depth(cloud, camera, delta=0.99)
        c = int(camera.cy), int(camera.cx)
        assert got[c] == pytest.approx(0.99 * 2.0 + 0.99 * 0.01 * 3.0, abs=1e-12)

    def test_delta_to_one_limit_keeps_only_nearest(self, rng):
        cloud = random_cloud(rng, 8)
        camera = identity_camera(width=24, height=24, f=30.0)
        got = render_hard_depth(cloud, camera, delta=1.0 - 1e-9)
        items = oracle_project(cloud, camera)
        dist0, _, mean0, cov0 = items[0]
        # probe the pixel nearest the front kernel's mean
        u, v = int(round(mean0[0])), int(round(mean0[1]))
        det = np.linalg.det(cov0)
        dx, dy = u - mean0[0], v - mean0[1]
        g = np.exp(-0.5 * (cov0[1, 1] * dx * dx - 2 * cov0[0, 1] * dx * dy
                           + cov0[0, 0] * dy * dy) / det)
        assert abs(got[v, u] - dist0 * g) <= 1e-6 * abs(dist0 * g)


class TestDifferentiability:
    def test_color_gradient_matches_finite_differences(self, rng):
        cloud = random_cloud(rng, 3)
        camera = identity_camera(width=16, height=16, f=20.0)
        centers = torch.tensor(cloud.centers, requires_grad=True)
        cov = torch.tensor(cloud.world_covariances())
        opac = torch.tensor(cloud.opacities)
        cols = torch.tensor(cloud.colors)

        def loss_of(c):
            color, _, _ = composite(c, cov, opac, cols, camera)
            return (color ** 2).sum()

        loss = loss_of(centers)
        loss.backward()
        grad = centers.grad.numpy()
        eps = 1e-6
        for k in (0, 2):
            for j in range(3):
                c_plus = cloud.centers.copy()
                c_plus[k, j] += eps
                c_minus = cloud.centers.copy()
                c_minus[k, j] -= eps
                with torch.no_grad():
                    fd = (loss_of(torch.tensor(c_plus)) - loss_of(torch.tensor(c_minus))) / (2 * eps)
                assert grad[k, j] == pytest.approx(float(fd), rel=2e-4, abs=1e-8)

    def test_hard_depth_gradient_flows_to_centers_only(self, rng):
        cloud = random_cloud(rng, 4)
        camera = identity_camera(width=16, height=16, f=20.0)
        centers = torch.tensor(cloud.centers, requires_grad=True)
        cov = torch.tensor(cloud.world_covariances(), requires_grad=True)
        depth = composite_hard_depth(centers, cov.detach(), camera, delta=0.99)
        depth.sum().backward()
        assert centers.grad is not None and np.isfinite(centers.grad.numpy()).all()
        assert cov.grad is None
