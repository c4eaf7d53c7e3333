"""Kernel-to-particle binding and covariance transport tests.

The covariance update is checked against the exact flow map
expm(t L) H expm(t L)^T (scipy provides the oracle), including the
first-order global convergence rate, plus the exactness contracts:
a skew gradient on an isotropic covariance must be a bit-level no-op,
and the eigenvalue floor must not touch healthy updates.
"""

import numpy as np
import pytest
from scipy.linalg import expm

from splatdyn import (
    GaussianCloud,
    advance,
    bind,
    sync,
    update_covariance,
)
from splatdyn.mpm import ExternalLoad, MpmGrid, MpmSolver, make_preset


def integrate(cov, grad_v, total_time, steps):
    dt = total_time / steps
    for _ in range(steps):
        cov = update_covariance(cov, grad_v, dt)
    return cov


def exact_transport(cov, grad_v, t):
    m = expm(t * grad_v)
    return m @ cov @ m.T


def random_spd(rng, scale=1.0):
    a = rng.normal(0.0, 1.0, size=(3, 3))
    return scale * (a @ a.T + 3.0 * np.eye(3))


def shell_cloud(h=0.1, n=5, origin=(0.4, 0.4, 0.4), opacity=0.8):
    """Kernels on the surface voxels of an n^3 cube, spaced one voxel."""
    coords = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if 0 < i < n - 1 and 0 < j < n - 1 and 0 < k < n - 1:
                    continue
                coords.append((i, j, k))
    centers = np.asarray(origin) + h * np.asarray(coords, dtype=np.float64)
    m = len(centers)
    cov = np.tile(1e-4 * np.eye(3), (m, 1, 1))
    return GaussianCloud.create(centers, np.full(m, opacity), cov,
                                np.full((m, 3), 0.5))


class TestCovarianceTransport:
    def test_matches_plain_formula_bitwise_when_no_floor_needed(self, rng):
        cov = random_spd(rng)
        grad = rng.normal(0.0, 0.5, size=(3, 3))
        dt = 1e-3
        growth = grad @ cov
        expected = cov + dt * (growth + growth.T)
        assert np.array_equal(update_covariance(cov, grad, dt), expected)

    def test_result_is_exactly_symmetric(self, rng):
        cov = random_spd(rng)
        grad = rng.normal(0.0, 1.0, size=(3, 3))
        out = update_covariance(cov, grad, 0.05)
        assert np.array_equal(out, out.T)

    def test_dt_zero_is_identity(self, rng):
        cov = random_spd(rng)
        grad = rng.normal(0.0, 1.0, size=(3, 3))
        assert np.array_equal(update_covariance(cov, grad, 0.0), cov)

    def test_skew_gradient_on_isotropic_covariance_is_a_noop(self):
        # grad_v H + H grad_v^T = s^2 (W + W^T) = 0 exactly for skew W
        cov = 0.37 * np.eye(3)
        w = np.array([[0.0, -1.3, 0.2],
                      [1.3, 0.0, -0.7],
                      [-0.2, 0.7, 0.0]])
        out = update_covariance(cov, w, 0.01)
        assert np.array_equal(out, cov)

    def test_first_order_convergence_against_matrix_exponential(self, rng):
        cov = random_spd(rng)
        grad = rng.normal(0.0, 0.6, size=(3, 3))
        total = 0.5
        truth = exact_transport(cov, grad, total)
        errs = []
        for steps in (40, 80):
            got = integrate(cov, grad, total, steps)
            errs.append(np.linalg.norm(got - truth))
        ratio = errs[0] / errs[1]
        assert 1.8 <= ratio <= 2.2

    def test_quarter_turn_tracks_rotated_covariance(self, rng):
        # integrate a pure rotation through 90 degrees in small steps and
        # compare against R H R^T for the exact quarter-turn R
        cov = random_spd(rng)
        omega = np.pi / 2.0
        w = omega * np.array([[0.0, -1.0, 0.0],
                              [1.0, 0.0, 0.0],
                              [0.0, 0.0, 0.0]])
        got = integrate(cov, w, 1.0, 300)
        r = np.array([[0.0, -1.0, 0.0],
                      [1.0, 0.0, 0.0],
                      [0.0, 0.0, 1.0]])
        truth = r @ cov @ r.T
        rel = np.linalg.norm(got - truth) / np.linalg.norm(truth)
        assert rel < 0.02

    def test_floor_rescues_collapsing_covariance(self):
        # a strong uniaxial contraction overshoots straight through zero;
        # the floored eigenvalue must come back at trace-relative scale
        cov = np.diag([0.5, 0.5, 2.0])
        grad = np.diag([0.0, 0.0, -0.6])
        new_raw = cov + 1.0 * (grad @ cov + cov @ grad.T)
        assert np.linalg.eigvalsh(new_raw)[0] < 0.0
        out = update_covariance(cov, grad, 1.0)
        vals = np.linalg.eigvalsh(out)
        floor = 1e-10 * np.trace(new_raw) / 3.0
        assert vals[0] >= floor * (1.0 - 1e-12)
        assert vals[0] < 1e-9

    def test_floor_only_touches_the_bad_batch_entries(self, rng):
        healthy = random_spd(rng)
        grad_h = rng.normal(0.0, 0.1, size=(3, 3))
        cov = np.stack([healthy, np.diag([0.5, 0.5, 2.0])])
        grad = np.stack([grad_h, np.diag([0.0, 0.0, -0.6])])
        out = update_covariance(cov, grad, 1.0)
        growth = grad_h @ healthy
        assert np.array_equal(out[0], healthy + (growth + growth.T))
        assert np.linalg.eigvalsh(out[1])[0] >= 0.0

    def test_batched_matches_loop(self, rng):
        cov = np.stack([random_spd(rng) for _ in range(4)])
        grad = rng.normal(0.0, 0.4, size=(4, 3, 3))
        out = update_covariance(cov, grad, 2e-3)
        for i in range(4):
            assert np.array_equal(out[i], update_covariance(cov[i], grad[i], 2e-3))


class TestBind:
    GRID = None

    def make_grid(self):
        return MpmGrid(origin=np.zeros(3), spacing=0.1, dims=(16, 16, 16))

    def test_hollow_shell_gets_interior_fillers(self):
        cloud = shell_cloud()
        state, binding = bind(cloud, self.make_grid(), make_preset("elastic"))
        assert binding.kernel_count == len(cloud) == 98
        assert binding.filler_count == 27  # the enclosed 3x3x3 core
        assert len(state.mpm) == 125
        # kernels first, fillers after, fillers on the voxel lattice
        assert np.array_equal(state.mpm.positions[:98], cloud.centers)
        fillers = state.mpm.positions[98:]
        frac = (fillers - cloud.centers.min(axis=0)) / 0.1
        assert np.allclose(frac, np.rint(frac), atol=1e-9)
        assert np.all((np.rint(frac) >= 1) & (np.rint(frac) <= 3))

    def test_volume_shared_equally_and_mass_follows_density(self):
        cloud = shell_cloud()
        material = make_preset("elastic", density=400.0)
        state, _ = bind(cloud, self.make_grid(), material)
        # 125 solid voxels at h = 0.1 split over 125 particles
        assert np.allclose(state.mpm.volumes, 0.1 ** 3)
        assert np.allclose(state.mpm.masses, 400.0 * 0.1 ** 3)

    def test_fill_disabled_keeps_only_kernels(self):
        cloud = shell_cloud()
        state, binding = bind(cloud, self.make_grid(), make_preset("elastic"),
                              fill=False)
        assert binding.filler_count == 0
        assert len(state.mpm) == 98
        # volume now counts only the occupied shell voxels
        assert np.allclose(state.mpm.volumes, 98 * 0.1 ** 3 / 98)

    def test_transparent_kernels_do_not_mark_voxels(self):
        centers = np.array([[0.5, 0.5, 0.5], [0.8, 0.5, 0.5]])
        cov = np.tile(1e-4 * np.eye(3), (2, 1, 1))
        cloud = GaussianCloud.create(centers, [0.9, 0.005], cov,
                                     np.full((2, 3), 0.5))
        state, _ = bind(cloud, self.make_grid(), make_preset("elastic"))
        # one occupied voxel shared over two particles
        assert np.allclose(state.mpm.volumes, 0.1 ** 3 / 2.0)

    def test_all_transparent_raises(self):
        centers = np.array([[0.5, 0.5, 0.5]])
        cloud = GaussianCloud.create(centers, [0.001],
                                     np.tile(1e-4 * np.eye(3), (1, 1, 1)),
                                     np.full((1, 3), 0.5))
        with pytest.raises(ValueError, match="opacity"):
            bind(cloud, self.make_grid(), make_preset("elastic"))

    def test_empty_cloud_raises(self):
        cloud = GaussianCloud.create(np.zeros((0, 3)), np.zeros(0),
                                     np.zeros((0, 3, 3)), np.zeros((0, 3)))
        with pytest.raises(ValueError, match="empty"):
            bind(cloud, self.make_grid(), make_preset("elastic"))

    def test_unknown_covariance_mode_raises(self):
        cloud = shell_cloud()
        with pytest.raises(ValueError, match="covariance mode"):
            bind(cloud, self.make_grid(), make_preset("elastic"),
                 covariance_mode="exact")

    def test_initial_velocity_is_broadcast(self):
        cloud = shell_cloud()
        state, _ = bind(cloud, self.make_grid(), make_preset("elastic"),
                        velocity=[0.1, 0.0, -0.2])
        assert np.allclose(state.mpm.velocities, [0.1, 0.0, -0.2])

    def test_bound_covariances_are_world_covariances(self, rng):
        cloud = shell_cloud()
        cloud.deformations[:] = np.eye(3) + rng.normal(0.0, 0.05, size=(98, 3, 3))
        state, binding = bind(cloud, self.make_grid(), make_preset("elastic"))
        assert np.allclose(state.covariances, cloud.world_covariances())
        # the re-rooted snapshot starts from identity deformation
        assert np.allclose(binding.source.deformations, np.eye(3))


class TestAdvanceAndSync:
    def setup_solver(self, cloud, material=None):
        grid = MpmGrid(origin=np.zeros(3), spacing=0.1, dims=(16, 16, 16))
        material = material or make_preset("elastic", youngs_modulus=1e4)
        return MpmSolver(grid, material), grid, material

    def test_rigid_translation_moves_centers_and_keeps_covariances(self):
        cloud = shell_cloud(origin=(0.5, 0.5, 0.5))
        solver, grid, material = self.setup_solver(cloud)
        state, binding = bind(cloud, grid, material, velocity=[0.3, 0.0, 0.0])
        dt = 0.01
        out = advance(solver, state, binding, dt)
        assert np.isclose(out.time, dt)
        moved = sync(binding, out)
        assert np.allclose(moved.centers, cloud.centers + dt * 0.3 * np.array([1, 0, 0]),
                           atol=1e-9)
        # a uniform velocity field has (numerically) zero gradient
        assert np.allclose(out.covariances, state.covariances,
                           rtol=0.0, atol=1e-12 * np.abs(state.covariances).max())

    def test_rest_state_sync_roundtrips_bitwise(self):
        cloud = shell_cloud()
        solver, grid, material = self.setup_solver(cloud)
        state, binding = bind(cloud, grid, material)
        out = advance(solver, state, binding, 0.005)
        moved = sync(binding, out)
        assert np.array_equal(moved.centers, cloud.centers)
        assert np.array_equal(moved.covariances, cloud.world_covariances())
        assert np.array_equal(moved.opacities, cloud.opacities)
        assert np.array_equal(moved.colors, cloud.colors)

    def test_from_deformation_sync_uses_particle_deformations(self, rng):
        cloud = shell_cloud()
        solver, grid, material = self.setup_solver(cloud)
        state, binding = bind(cloud, grid, material,
                              covariance_mode="from_deformation")
        f = np.eye(3) + rng.normal(0.0, 0.03, size=(98, 3, 3))
        state.mpm.deformations[:98] = f
        moved = sync(binding, state)
        expected = np.einsum("nij,njk,nlk->nil", f, cloud.world_covariances(), f)
        assert np.allclose(moved.world_covariances(), expected)

    def test_from_deformation_advance_leaves_tracked_covariances_alone(self):
        cloud = shell_cloud()
        solver, grid, material = self.setup_solver(cloud)
        state, binding = bind(cloud, grid, material,
                              covariance_mode="from_deformation")
        load = ExternalLoad(kind="gravity", vector=[0.0, -9.8, 0.0])
        out = advance(solver, state, binding, 0.01, loads=[load])
        assert np.array_equal(out.covariances, state.covariances)

    def test_incremental_sync_stores_tracked_covariances(self):
        cloud = shell_cloud()
        solver, grid, material = self.setup_solver(cloud)
        state, binding = bind(cloud, grid, material)
        load = ExternalLoad(kind="gravity", vector=[0.0, -9.8, 0.0])
        out = advance(solver, state, binding, 0.01, loads=[load])
        moved = sync(binding, out)
        assert np.array_equal(moved.covariances, out.covariances)
        assert np.allclose(moved.deformations, np.eye(3))

    def test_advance_substeps_past_the_cfl_bound(self):
        cloud = shell_cloud()
        solver, grid, material = self.setup_solver(cloud)
        state, binding = bind(cloud, grid, material)
        dt = 3.7 * solver.stable_dt(state.mpm)
        out = advance(solver, state, binding, dt)
        assert np.isclose(out.time, dt, rtol=0.0, atol=1e-15)

    def test_advance_rejects_nonpositive_dt(self):
        cloud = shell_cloud()
        solver, grid, material = self.setup_solver(cloud)
        state, binding = bind(cloud, grid, material)
        with pytest.raises(ValueError, match="dt"):
            advance(solver, state, binding, 0.0)

    def test_sync_rejects_truncated_state(self):
        cloud = shell_cloud()
        solver, grid, material = self.setup_solver(cloud)
        state, binding = bind(cloud, grid, material)
        state.mpm.positions = state.mpm.positions[:10]
        with pytest.raises(ValueError, match="binding"):
            sync(binding, state)

    def test_synced_cloud_is_renderable(self):
        # end to end: simulate a few steps, sync, validate, project
        from splatdyn import azimuth_camera, render

        cloud = shell_cloud()
        solver, grid, material = self.setup_solver(cloud)
        state, binding = bind(cloud, grid, material,
                              velocity=[0.0, 0.2, 0.0])
        out = advance(solver, state, binding, 0.01)
        moved = sync(binding, out)
        moved.validate()
        camera = azimuth_camera(0, radius=2.0, target=[0.6, 0.6, 0.6],
                                fx=40.0, width=32, height=32)
        image = render(moved, camera)
        assert np.isfinite(image.color).all()
        assert image.alpha.max() > 0.0
