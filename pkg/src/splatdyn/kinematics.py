"""Drive Gaussian kernels with the MPM solver.

Kernel centers become material points directly; optional filler particles
pad the enclosed interior so thin shells move like solid bodies.  Kernel
covariances either follow the local velocity gradient with the first-order
transport update

    H <- H + dt (grad_v H + H grad_v^T)

or are rebuilt on demand from the per-particle elastic deformation as
F H0 F^T, depending on the binding's covariance mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussians import GaussianCloud
from .mpm import MpmSolver, MpmState

COVARIANCE_MODES = ("incremental", "from_deformation")

# Kernels this transparent do not mark voxels as solid during binding.
FILL_OPACITY_THRESHOLD = 0.02

# Transported covariances only get eigenvalue-floored (relative to their
# trace) when the update actually drives them degenerate; clean updates
# are returned untouched so rigid motion stays bit-exact.
EIGENVALUE_FLOOR_SCALE = 1e-10


@dataclass
class Binding:
    """How a cloud was turned into material points.

    ``source`` is a re-rooted snapshot taken at bind time: rest centers
    equal the bind-time centers, deformations are identity, and the stored
    covariances are the bind-time world covariances.
    """

    source: GaussianCloud
    kernel_count: int
    filler_count: int
    covariance_mode: str
    spacing: float


@dataclass
class BoundState:
    """MPM state plus the tracked world covariances of the kernels."""

    mpm: MpmState
    covariances: np.ndarray  # (K, 3, 3)

    @property
    def time(self) -> float:
        return self.mpm.time

    def copy(self) -> "BoundState":
        return BoundState(self.mpm.copy(), self.covariances.copy())


def _enclosed_voxels(occupied: np.ndarray) -> np.ndarray:
    """Empty voxels with no 6-connected path to the bounding box faces."""
    empty = ~occupied
    reach = np.zeros_like(empty)
    for axis in range(3):
        face = [slice(None)] * 3
        face[axis] = 0
        reach[tuple(face)] |= empty[tuple(face)]
        face[axis] = -1
        reach[tuple(face)] |= empty[tuple(face)]
    while True:
        grown = reach.copy()
        grown[1:] |= reach[:-1]
        grown[:-1] |= reach[1:]
        grown[:, 1:] |= reach[:, :-1]
        grown[:, :-1] |= reach[:, 1:]
        grown[:, :, 1:] |= reach[:, :, :-1]
        grown[:, :, :-1] |= reach[:, :, 1:]
        grown &= empty
        if np.array_equal(grown, reach):
            return empty & ~reach
        reach = grown


def bind(cloud: GaussianCloud, grid, material, *,
         covariance_mode: str = "incremental",
         opacity_threshold: float = FILL_OPACITY_THRESHOLD,
         fill: bool = True, velocity=None) -> tuple[BoundState, Binding]:
    """Turn a cloud into an MPM state (kernels first, fillers after).

    The cloud's bounding box is voxelized at the grid spacing with voxels
    centered on the lattice nodes lo + i h (nearest-node binning, so
    kernels laid out exactly h apart land where expected).  Voxels holding
    a kernel with opacity >= ``opacity_threshold`` count as solid, and
    with ``fill`` enabled every enclosed empty voxel receives one filler
    particle at its node.  Each particle gets an equal share of the
    estimated solid volume, V_p = (solid voxels) h^3 / P, and the mass
    ``material.density * V_p``.
    """
    if covariance_mode not in COVARIANCE_MODES:
        raise ValueError(f"unknown covariance mode {covariance_mode!r}")
    if len(cloud) == 0:
        raise ValueError("cannot bind an empty cloud")
    cloud.validate()

    h = float(grid.spacing)
    centers = cloud.centers
    lo = centers.min(axis=0)
    extent = centers.max(axis=0) - lo
    nvox = np.floor(extent / h + 0.5).astype(np.int64) + 1
    idx = np.clip(np.rint((centers - lo) / h).astype(np.int64), 0, nvox - 1)

    occupied = np.zeros(tuple(nvox), dtype=bool)
    visible = cloud.opacities >= opacity_threshold
    occupied[tuple(idx[visible].T)] = True
    if not occupied.any():
        raise ValueError(
            "cannot estimate the body volume: no kernel opacity reaches "
            f"the fill threshold {opacity_threshold}")

    if fill:
        interior = _enclosed_voxels(occupied)
    else:
        interior = np.zeros_like(occupied)
    fillers = lo + np.argwhere(interior) * h

    solid = int(occupied.sum()) + int(interior.sum())
    positions = np.vstack([centers, fillers])
    volume = solid * h ** 3 / positions.shape[0]
    state = MpmState.from_positions(positions, mass=material.density * volume,
                                    volume=volume)
    if velocity is not None:
        state.velocities[:] = np.asarray(velocity, dtype=np.float64).reshape(3)

    source = cloud.copy()
    source.rest_centers = centers.copy()
    source.covariances = cloud.world_covariances()
    source.deformations = np.tile(np.eye(3), (len(cloud), 1, 1))
    binding = Binding(source=source, kernel_count=len(cloud),
                      filler_count=fillers.shape[0],
                      covariance_mode=covariance_mode, spacing=h)
    return BoundState(state, source.covariances.copy()), binding


def update_covariance(cov: np.ndarray, grad_v: np.ndarray, dt: float, *,
                      floor_scale: float = EIGENVALUE_FLOOR_SCALE) -> np.ndarray:
    """Transport covariances through one step of the velocity field.

    Returns cov + dt (grad_v cov + cov grad_v^T), which is symmetric by
    construction.  Eigenvalues are clamped to floor_scale * trace / 3 only
    for the matrices that actually dip below it; everything else is the
    plain update, bit for bit (a skew gradient acting on an isotropic
    covariance is an exact no-op).
    """
    cov = np.asarray(cov, dtype=np.float64)
    grad_v = np.asarray(grad_v, dtype=np.float64)
    growth = grad_v @ cov
    new = cov + dt * (growth + np.swapaxes(growth, -1, -2))

    flat = new.reshape(-1, 3, 3)
    trace = np.trace(flat, axis1=-2, axis2=-1)
    floor = floor_scale * np.maximum(trace, 0.0) / 3.0
    vals = np.linalg.eigvalsh(flat)
    bad = vals[:, 0] < floor
    if not bad.any():
        return new
    flat = flat.copy()
    vals, vecs = np.linalg.eigh(flat[bad])
    vals = np.maximum(vals, floor[bad, None])
    flat[bad] = (vecs * vals[:, None, :]) @ np.swapaxes(vecs, -1, -2)
    return flat.reshape(new.shape)


def advance(solver: MpmSolver, state: BoundState, binding: Binding,
            dt: float, loads=()) -> BoundState:
    """Step a bound simulation by dt, clamped to the CFL bound per substep.

    Incremental bindings refresh the kernel covariances after every
    substep from the freshly gathered velocity gradients; deformation
    bindings leave them alone (sync rebuilds from F instead).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    mpm = state.mpm
    covariances = state.covariances
    track = binding.covariance_mode == "incremental"
    k = binding.kernel_count
    remaining = dt
    while remaining > 0.0:
        sdt = min(solver.stable_dt(mpm), remaining)
        if remaining - sdt < 1e-12 * dt:
            sdt = remaining
        mpm = solver.substep(mpm, sdt, loads)
        if track:
            covariances = update_covariance(covariances, mpm.affines[:k], sdt)
        remaining -= sdt
    return BoundState(mpm, covariances)


def sync(binding: Binding, state: BoundState) -> GaussianCloud:
    """Write the simulated kernels back into a renderable cloud.

    Incremental mode stores the tracked covariances directly (deformation
    stays identity); from_deformation mode copies the particles' elastic F
    so the cloud's world covariances become F H0 F^T.
    """
    k = binding.kernel_count
    if len(state.mpm) < k:
        raise ValueError(
            f"state holds {len(state.mpm)} particles but the binding "
            f"expects at least {k}")
    cloud = binding.source.copy()
    cloud.centers = state.mpm.positions[:k].copy()
    if binding.covariance_mode == "incremental":
        cloud.covariances = state.covariances.copy()
    else:
        cloud.deformations = state.mpm.deformations[:k].copy()
    return cloud
