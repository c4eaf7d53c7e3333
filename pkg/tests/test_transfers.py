"""B-spline stencil weights and particle/grid transfer kernels.

The scatter oracle re-accumulates grid quantities with np.add.at from the
numpy reference stencil; the derived per-axis weight values come from
evaluating N(x) = {3/4 - x^2, 0.5 (3/2 - |x|)^2} by hand.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatdyn.mpm import weight_stencil
from splatdyn.mpm.transfers import g2p_gather, p2g_scatter

ORIGIN = np.zeros(3)
H = 0.125  # exactly representable, so hand-derived weights compare bit-exact
DIMS = (12, 12, 12)


def interior_positions(rng, n):
    return ORIGIN + H * rng.uniform(1.5, 9.5, size=(n, 3))


def axis_weights(weights, axis):
    """Collapse a (P, 3, 3, 3) stencil onto one axis (partition of unity)."""
    other = tuple(a + 1 for a in range(3) if a != axis)
    return weights.sum(axis=other)


class TestStencilWeights:
    def test_particle_on_node_gets_125_75_125(self):
        pos = ORIGIN + H * np.array([[4.0, 5.0, 6.0]])
        base, w, _ = weight_stencil(pos, ORIGIN, H)
        assert list(base[0]) == [3, 4, 5]
        for axis in range(3):
            assert np.array_equal(axis_weights(w, axis)[0], [0.125, 0.75, 0.125])

    def test_quarter_cell_offset_weights(self):
        # N at |x| = 0.25, 0.75, 1.25 -> 0.6875, 0.28125, 0.03125
        pos = ORIGIN + H * np.array([[4.0 - 0.25, 5.0, 6.0]])
        _, w, _ = weight_stencil(pos, ORIGIN, H)
        assert np.array_equal(axis_weights(w, 0)[0], [0.28125, 0.6875, 0.03125])
        pos = ORIGIN + H * np.array([[4.0 + 0.25, 5.0, 6.0]])
        _, w, _ = weight_stencil(pos, ORIGIN, H)
        assert np.array_equal(axis_weights(w, 0)[0], [0.03125, 0.6875, 0.28125])

    def test_partition_of_unity_on_1000_positions(self, rng):
        _, w, dw = weight_stencil(interior_positions(rng, 1000), ORIGIN, H)
        assert np.abs(w.sum(axis=(1, 2, 3)) - 1.0).max() <= 1e-12
        assert np.abs(dw.sum(axis=(1, 2, 3))).max() <= 1e-10 / H

    def test_weights_nonnegative(self, rng):
        _, w, _ = weight_stencil(interior_positions(rng, 500), ORIGIN, H)
        assert (w >= 0.0).all()

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=60, deadline=None)
    def test_partition_of_unity_property(self, ax, ay, az):
        pos = ORIGIN + H * (np.array([[3.0, 4.0, 5.0]]) + np.array([[ax, ay, az]]))
        _, w, dw = weight_stencil(pos, ORIGIN, H)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.abs(dw.sum(axis=(1, 2, 3))).max() <= 1e-10 / H

    def test_linear_field_reproduction(self, rng):
        pos = interior_positions(rng, 1000)
        base, w, dw = weight_stencil(pos, ORIGIN, H)
        amat = rng.normal(size=(3, 3))
        offsets = np.stack(np.meshgrid(*([np.arange(3)] * 3), indexing="ij"), axis=-1)
        nodes = (base[:, None, None, None, :] + offsets) * H + ORIGIN  # (P,3,3,3,3)
        vnodes = nodes @ amat.T
        # interpolated value reproduces v = A x at the particle
        vp = np.einsum("pijk,pijkc->pc", w, vnodes)
        assert np.abs(vp - pos @ amat.T).max() <= 1e-12 * max(1.0, np.abs(vp).max())
        # gradient sum v_i grad(w)^T reproduces A
        grad = np.einsum("pijkc,pijkd->pcd", vnodes, dw)
        assert np.abs(grad - amat).max() <= 1e-10 * max(1.0, np.abs(amat).max())


class TestScatterKernel:
    def _oracle_scatter(self, pos, vel, affine, mass, apic):
        base, w, dw = weight_stencil(pos, ORIGIN, H)
        grid_m = np.zeros(DIMS)
        grid_mom = np.zeros(DIMS + (3,))
        offsets = np.stack(np.meshgrid(*([np.arange(3)] * 3), indexing="ij"), axis=-1)
        for p in range(pos.shape[0]):
            for i in range(3):
                for j in range(3):
                    for k in range(3):
                        n = tuple(base[p] + [i, j, k])
                        node_pos = np.asarray(n) * H + ORIGIN
                        v_eff = vel[p].copy()
                        if apic:
                            v_eff += affine[p] @ (node_pos - pos[p])
                        grid_m[n] += w[p, i, j, k] * mass[p]
                        grid_mom[n] += w[p, i, j, k] * mass[p] * v_eff
        return grid_m, grid_mom

    @pytest.mark.parametrize("apic", [True, False])
    def test_matches_numpy_oracle(self, apic, rng):
        n = 40
        pos = interior_positions(rng, n)
        vel = rng.normal(size=(n, 3))
        affine = rng.normal(size=(n, 3, 3))
        mass = rng.uniform(0.5, 2.0, size=n)
        grid_m = np.zeros(DIMS)
        grid_mom = np.zeros(DIMS + (3,))
        grid_f = np.zeros(DIMS + (3,))
        p2g_scatter(pos, vel, affine, mass, np.ones(n), np.zeros((n, 3, 3)),
                    np.zeros((n, 3)), ORIGIN, H, grid_m, grid_mom, grid_f, apic)
        om, omom = self._oracle_scatter(pos, vel, affine, mass, apic)
        assert np.abs(grid_m - om).max() <= 1e-13 * mass.max()
        assert np.abs(grid_mom - omom).max() <= 1e-12 * np.abs(omom).max()
        assert np.abs(grid_f).max() == 0.0

    def test_total_mass_and_momentum_preserved(self, rng):
        n = 200
        pos = interior_positions(rng, n)
        vel = rng.normal(size=(n, 3))
        affine = rng.normal(size=(n, 3, 3)) * 5.0
        mass = rng.uniform(0.5, 2.0, size=n)
        grid_m = np.zeros(DIMS)
        grid_mom = np.zeros(DIMS + (3,))
        grid_f = np.zeros(DIMS + (3,))
        p2g_scatter(pos, vel, affine, mass, np.ones(n), np.zeros((n, 3, 3)),
                    np.zeros((n, 3)), ORIGIN, H, grid_m, grid_mom, grid_f, True)
        assert grid_m.sum() == pytest.approx(mass.sum(), rel=1e-12)
        # the APIC affine term adds no net momentum
        want = (mass[:, None] * vel).sum(axis=0)
        assert np.abs(grid_mom.sum(axis=(0, 1, 2)) - want).max() \
            <= 1e-12 * max(1.0, np.abs(want).max())

    def test_internal_force_sums_to_zero(self, rng):
        n = 80
        pos = interior_positions(rng, n)
        stress = rng.normal(size=(n, 3, 3)) * 1e4
        stress = stress + stress.swapaxes(1, 2)
        grid_m = np.zeros(DIMS)
        grid_mom = np.zeros(DIMS + (3,))
        grid_f = np.zeros(DIMS + (3,))
        p2g_scatter(pos, np.zeros((n, 3)), np.zeros((n, 3, 3)),
                    np.ones(n), np.full(n, 1e-3), stress, np.zeros((n, 3)),
                    ORIGIN, H, grid_m, grid_mom, grid_f, True)
        total = grid_f.sum(axis=(0, 1, 2))
        scale = np.abs(grid_f).max()
        assert np.abs(total).max() <= 1e-12 * max(scale, 1.0)


class TestGatherKernel:
    def test_gather_reproduces_linear_grid_field(self, rng):
        n = 50
        pos = interior_positions(rng, n)
        amat = rng.normal(size=(3, 3))
        nodes = np.stack(np.meshgrid(
            *[ORIGIN[a] + H * np.arange(DIMS[a]) for a in range(3)],
            indexing="ij"), axis=-1)
        grid_v = nodes @ amat.T
        out_v = np.zeros((n, 3))
        out_grad = np.zeros((n, 3, 3))
        xs = pos.copy()
        g2p_gather(xs, grid_v, ORIGIN, H, 0.0, out_v, out_grad)
        assert np.abs(out_v - pos @ amat.T).max() <= 1e-12
        assert np.abs(out_grad - amat).max() <= 1e-10
        assert np.array_equal(xs, pos)  # dt = 0 leaves positions alone

    def test_advection_moves_by_dt_v(self, rng):
        n = 20
        pos = interior_positions(rng, n)
        grid_v = np.full(DIMS + (3,), 0.25)
        out_v = np.zeros((n, 3))
        out_grad = np.zeros((n, 3, 3))
        xs = pos.copy()
        g2p_gather(xs, grid_v, ORIGIN, H, 0.01, out_v, out_grad)
        assert np.abs(out_v - 0.25).max() <= 1e-13
        assert np.abs(xs - (pos + 0.01 * 0.25)).max() <= 1e-15
