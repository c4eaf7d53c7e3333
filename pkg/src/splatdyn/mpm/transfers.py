"""Quadratic B-spline particle/grid transfers.

Per axis, with fx = grid-relative position minus the stencil base (in
[0.5, 1.5]), the three node weights are

    w = [0.5 (1.5 - fx)^2,  0.75 - (fx - 1)^2,  0.5 (fx - 0.5)^2]

which is N(x) = 3/4 - x^2 for |x| <= 1/2 and 0.5 (3/2 - |x|)^2 for
1/2 < |x| < 3/2 evaluated at the three node offsets. ``weight_stencil``
is the vectorized numpy reference; the numba kernels repeat the same
scalar math in serial particle-major loops, so scatter order is fixed and
results are bit-reproducible at any thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit


def weight_stencil(positions, origin, spacing):
    """Stencil bases, weights, and weight gradients for particle positions.

    Args:
        positions: (P, 3) world positions.
        origin: (3,) grid origin (node 0 position).
        spacing: grid cell size h.

    Returns:
        base: (P, 3) int indices of the lowest stencil node per axis.
        weights: (P, 3, 3, 3) node weights, indexed [p, i, j, k] for node
            base + (i, j, k).
        grads: (P, 3, 3, 3, 3) world-space weight gradients per node.
    """
    positions = np.asarray(positions, dtype=np.float64)
    rel = (positions - np.asarray(origin, dtype=np.float64)) / spacing
    base = np.floor(rel - 0.5).astype(np.int64)
    fx = rel - base  # (P, 3), each in [0.5, 1.5]
    w = np.stack([0.5 * (1.5 - fx) ** 2,
                  0.75 - (fx - 1.0) ** 2,
                  0.5 * (fx - 0.5) ** 2], axis=1)          # (P, 3 offsets, 3 axes)
    dw = np.stack([-(1.5 - fx),
                   -2.0 * (fx - 1.0),
                   (fx - 0.5)], axis=1) / spacing           # (P, 3 offsets, 3 axes)
    weights = np.einsum("pi,pj,pk->pijk", w[:, :, 0], w[:, :, 1], w[:, :, 2])
    grads = np.stack([
        np.einsum("pi,pj,pk->pijk", dw[:, :, 0], w[:, :, 1], w[:, :, 2]),
        np.einsum("pi,pj,pk->pijk", w[:, :, 0], dw[:, :, 1], w[:, :, 2]),
        np.einsum("pi,pj,pk->pijk", w[:, :, 0], w[:, :, 1], dw[:, :, 2]),
    ], axis=-1)                                             # (P, 3, 3, 3, 3)
    return base, weights, grads


@njit(cache=True)
def p2g_scatter(x, v, affine, mass, volume, stress, fext, origin, spacing,
                grid_m, grid_mom, grid_f, apic):
    """Scatter mass, momentum, and force to the grid (serial, fixed order).

    grid_mom picks up w m (v + C (x_i - x_p)) per node (APIC) or w m v (PIC);
    grid_f picks up the internal force -V0 tau grad(w) plus w f_ext.
    """
    inv_h = 1.0 / spacing
    for p in range(x.shape[0]):
        gx = (x[p, 0] - origin[0]) * inv_h
        gy = (x[p, 1] - origin[1]) * inv_h
        gz = (x[p, 2] - origin[2]) * inv_h
        bx = int(np.floor(gx - 0.5))
        by = int(np.floor(gy - 0.5))
        bz = int(np.floor(gz - 0.5))
        fx = gx - bx
        fy = gy - by
        fz = gz - bz
        wx = (0.5 * (1.5 - fx) ** 2, 0.75 - (fx - 1.0) ** 2, 0.5 * (fx - 0.5) ** 2)
        wy = (0.5 * (1.5 - fy) ** 2, 0.75 - (fy - 1.0) ** 2, 0.5 * (fy - 0.5) ** 2)
        wz = (0.5 * (1.5 - fz) ** 2, 0.75 - (fz - 1.0) ** 2, 0.5 * (fz - 0.5) ** 2)
        dwx = (-(1.5 - fx) * inv_h, -2.0 * (fx - 1.0) * inv_h, (fx - 0.5) * inv_h)
        dwy = (-(1.5 - fy) * inv_h, -2.0 * (fy - 1.0) * inv_h, (fy - 0.5) * inv_h)
        dwz = (-(1.5 - fz) * inv_h, -2.0 * (fz - 1.0) * inv_h, (fz - 0.5) * inv_h)
        m_p = mass[p]
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    ni, nj, nk = bx + i, by + j, bz + k
                    w = wx[i] * wy[j] * wz[k]
                    gwx = dwx[i] * wy[j] * wz[k]
                    gwy = wx[i] * dwy[j] * wz[k]
                    gwz = wx[i] * wy[j] * dwz[k]
                    vx, vy, vz = v[p, 0], v[p, 1], v[p, 2]
                    if apic:
                        dx = (ni * spacing + origin[0]) - x[p, 0]
                        dy = (nj * spacing + origin[1]) - x[p, 1]
                        dz = (nk * spacing + origin[2]) - x[p, 2]
                        vx += affine[p, 0, 0] * dx + affine[p, 0, 1] * dy + affine[p, 0, 2] * dz
                        vy += affine[p, 1, 0] * dx + affine[p, 1, 1] * dy + affine[p, 1, 2] * dz
                        vz += affine[p, 2, 0] * dx + affine[p, 2, 1] * dy + affine[p, 2, 2] * dz
                    grid_m[ni, nj, nk] += w * m_p
                    grid_mom[ni, nj, nk, 0] += w * m_p * vx
                    grid_mom[ni, nj, nk, 1] += w * m_p * vy
                    grid_mom[ni, nj, nk, 2] += w * m_p * vz
                    vol = volume[p]
                    grid_f[ni, nj, nk, 0] += w * fext[p, 0] - vol * (
                        stress[p, 0, 0] * gwx + stress[p, 0, 1] * gwy + stress[p, 0, 2] * gwz)
                    grid_f[ni, nj, nk, 1] += w * fext[p, 1] - vol * (
                        stress[p, 1, 0] * gwx + stress[p, 1, 1] * gwy + stress[p, 1, 2] * gwz)
                    grid_f[ni, nj, nk, 2] += w * fext[p, 2] - vol * (
                        stress[p, 2, 0] * gwx + stress[p, 2, 1] * gwy + stress[p, 2, 2] * gwz)


@njit(cache=True)
def g2p_gather(x, grid_v, origin, spacing, dt, out_v, out_grad):
    """Gather velocities and velocity gradients, then advect positions.

    out_grad[p] = sum_i v_i grad(w)^T; x[p] += dt * v_new (in place).
    """
    inv_h = 1.0 / spacing
    for p in range(x.shape[0]):
        gx = (x[p, 0] - origin[0]) * inv_h
        gy = (x[p, 1] - origin[1]) * inv_h
        gz = (x[p, 2] - origin[2]) * inv_h
        bx = int(np.floor(gx - 0.5))
        by = int(np.floor(gy - 0.5))
        bz = int(np.floor(gz - 0.5))
        fx = gx - bx
        fy = gy - by
        fz = gz - bz
        wx = (0.5 * (1.5 - fx) ** 2, 0.75 - (fx - 1.0) ** 2, 0.5 * (fx - 0.5) ** 2)
        wy = (0.5 * (1.5 - fy) ** 2, 0.75 - (fy - 1.0) ** 2, 0.5 * (fy - 0.5) ** 2)
        wz = (0.5 * (1.5 - fz) ** 2, 0.75 - (fz - 1.0) ** 2, 0.5 * (fz - 0.5) ** 2)
        dwx = (-(1.5 - fx) * inv_h, -2.0 * (fx - 1.0) * inv_h, (fx - 0.5) * inv_h)
        dwy = (-(1.5 - fy) * inv_h, -2.0 * (fy - 1.0) * inv_h, (fy - 0.5) * inv_h)
        dwz = (-(1.5 - fz) * inv_h, -2.0 * (fz - 1.0) * inv_h, (fz - 0.5) * inv_h)
        vx = vy = vz = 0.0
        g00 = g01 = g02 = g10 = g11 = g12 = g20 = g21 = g22 = 0.0
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    ni, nj, nk = bx + i, by + j, bz + k
                    w = wx[i] * wy[j] * wz[k]
                    gwx = dwx[i] * wy[j] * wz[k]
                    gwy = wx[i] * dwy[j] * wz[k]
                    gwz = wx[i] * wy[j] * dwz[k]
                    nvx = grid_v[ni, nj, nk, 0]
                    nvy = grid_v[ni, nj, nk, 1]
                    nvz = grid_v[ni, nj, nk, 2]
                    vx += w * nvx
                    vy += w * nvy
                    vz += w * nvz
                    g00 += nvx * gwx
                    g01 += nvx * gwy
                    g02 += nvx * gwz
                    g10 += nvy * gwx
                    g11 += nvy * gwy
                    g12 += nvy * gwz
                    g20 += nvz * gwx
                    g21 += nvz * gwy
                    g22 += nvz * gwz
        out_v[p, 0] = vx
        out_v[p, 1] = vy
        out_v[p, 2] = vz
        out_grad[p, 0, 0] = g00
        out_grad[p, 0, 1] = g01
        out_grad[p, 0, 2] = g02
        out_grad[p, 1, 0] = g10
        out_grad[p, 1, 1] = g11
        out_grad[p, 1, 2] = g12
        out_grad[p, 2, 0] = g20
        out_grad[p, 2, 1] = g21
        out_grad[p, 2, 2] = g22
        x[p, 0] += dt * vx
        x[p, 1] += dt * vy
        x[p, 2] += dt * vz
