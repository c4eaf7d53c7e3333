"""Explicit MPM stepper: P2G, forward-Euler grid update, collisions, G2P.

One substep is

    1. Kirchhoff stress per particle from the current elastic F
    2. external per-particle forces from the active loads
    3. scatter mass / momentum / force to the grid (APIC or PIC)
    4. grid velocities v = (momentum + dt force) / mass, then colliders
    5. gather velocities and velocity gradients, advect particles
    6. F_trial = (I + dt grad v) F, plastic return map

``step`` covers an arbitrary dt, substepping automatically (with a
warning) whenever dt exceeds the CFL bound 0.3 h / (c + max |v|).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .constitutive import ConstitutiveModel, return_map, stress_kirchhoff
from .transfers import g2p_gather, p2g_scatter

CFL_DEFAULT = 0.3

# Grid nodes whose scattered mass falls below 1e-12 x median particle mass
# are treated as empty.
MASS_EPS_SCALE = 1e-12


@dataclass
class MpmGrid:
    origin: np.ndarray          # (3,) position of node (0, 0, 0)
    spacing: float              # cell size h
    dims: tuple[int, int, int]  # node counts per axis

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.dims = tuple(int(d) for d in self.dims)
        if self.spacing <= 0.0:
            raise ValueError("grid spacing must be positive")
        if any(d < 4 for d in self.dims):
            raise ValueError("grid needs at least 4 nodes per axis")

    def node_positions(self) -> np.ndarray:
        axes = [self.origin[a] + self.spacing * np.arange(self.dims[a]) for a in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)


@dataclass
class MpmState:
    positions: np.ndarray     # (P, 3)
    velocities: np.ndarray    # (P, 3)
    deformations: np.ndarray  # (P, 3, 3) elastic F
    affines: np.ndarray       # (P, 3, 3) APIC matrix = last gathered grad v
    masses: np.ndarray        # (P,)
    volumes: np.ndarray       # (P,) rest volumes V_p^0
    plastic: np.ndarray       # (P,) accumulated plastic flow magnitude
    materials: np.ndarray     # (P,) int32 indices into the solver's material list
    time: float = 0.0

    @classmethod
    def from_positions(cls, positions, *, mass, volume, material=0) -> "MpmState":
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        p = positions.shape[0]
        return cls(
            positions=positions,
            velocities=np.zeros((p, 3)),
            deformations=np.tile(np.eye(3), (p, 1, 1)),
            affines=np.zeros((p, 3, 3)),
            masses=np.full(p, float(mass)),
            volumes=np.full(p, float(volume)),
            plastic=np.zeros(p),
            materials=np.full(p, material, dtype=np.int32),
        )

    def __len__(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "MpmState":
        return MpmState(
            self.positions.copy(), self.velocities.copy(), self.deformations.copy(),
            self.affines.copy(), self.masses.copy(), self.volumes.copy(),
            self.plastic.copy(), self.materials.copy(), self.time)

    def momentum(self) -> np.ndarray:
        return (self.masses[:, None] * self.velocities).sum(axis=0)


@dataclass
class Region:
    """Spatial predicate for loads: a sphere, an axis-aligned box, or everything."""

    kind: str = "all"           # "all" | "sphere" | "box"
    center: np.ndarray | None = None
    radius: float = 0.0
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("all", "sphere", "box"):
            raise ValueError(f"unknown region kind {self.kind!r}")
        if self.kind == "sphere":
            if self.center is None or self.radius <= 0.0:
                raise ValueError("sphere region needs a center and a positive radius")
            self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        if self.kind == "box":
            if self.lo is None or self.hi is None:
                raise ValueError("box region needs lo and hi corners")
            self.lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
            self.hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
            if np.any(self.hi <= self.lo):
                raise ValueError("box region needs hi > lo on every axis")

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if self.kind == "all":
            return np.ones(points.shape[0], dtype=bool)
        if self.kind == "sphere":
            return np.linalg.norm(points - self.center, axis=1) <= self.radius
        return np.all((points >= self.lo) & (points <= self.hi), axis=1)


LOAD_KINDS = ("gravity", "point_force", "torque", "impulse")


@dataclass
class ExternalLoad:
    """Time-windowed external load.

    kind = "gravity":      vector is an acceleration applied to every
                           particle in the region (f = m g).
    kind = "point_force":  vector is a total force split equally over the
                           particles currently inside the region.
    kind = "torque":       vector is the torque (axis * magnitude) about
                           ``center``; per-particle force
                           f(x) = vector x (x - center) / sum ||x - center||^2
                           over the in-region particles.
    kind = "impulse":      vector is a velocity delta added once, during the
                           substep whose window contains window[0].
    """

    kind: str
    vector: np.ndarray
    center: np.ndarray | None = None
    region: Region = field(default_factory=Region)
    window: tuple[float, float] = (0.0, np.inf)

    def __post_init__(self):
        if self.kind not in LOAD_KINDS:
            raise ValueError(f"unknown load kind {self.kind!r}")
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(3)
        if self.kind == "torque":
            if self.center is None:
                raise ValueError("torque load needs a center")
            self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        if not self.window[0] <= self.window[1]:
            raise ValueError("load window must have t0 <= t1")

    def active(self, t: float) -> bool:
        return self.window[0] <= t < self.window[1]

    def force(self, state: MpmState) -> np.ndarray | None:
        """Per-particle force (P, 3) at the state's time, or None if inactive."""
        if self.kind == "impulse" or not self.active(state.time):
            return None
        inside = self.region.contains(state.positions)
        if not inside.any():
            return None
        out = np.zeros((len(state), 3))
        if self.kind == "gravity":
            out[inside] = state.masses[inside, None] * self.vector
        elif self.kind == "point_force":
            out[inside] = self.vector / inside.sum()
        else:  # torque
            arm = state.positions[inside] - self.center
            denom = (arm ** 2).sum()
            if denom > 0.0:
                out[inside] = np.cross(np.broadcast_to(self.vector, arm.shape), arm) / denom
        return out


@dataclass
class Collider:
    """Grid-node collider: nodes inside have their velocity projected.

    sticky zeroes the velocity; separating removes the inward normal
    component and applies Coulomb friction (coefficient ``friction``) to
    the tangential part.
    """

    kind: str                    # "plane" | "box"
    mode: str = "sticky"         # "sticky" | "separating"
    friction: float = 0.0
    point: np.ndarray | None = None    # plane
    normal: np.ndarray | None = None   # plane
    lo: np.ndarray | None = None       # box
    hi: np.ndarray | None = None       # box

    def __post_init__(self):
        if self.kind not in ("plane", "box"):
            raise ValueError(f"unknown collider kind {self.kind!r}")
        if self.mode not in ("sticky", "separating"):
            raise ValueError(f"unknown collider mode {self.mode!r}")
        if self.friction < 0.0:
            raise ValueError("friction must be nonnegative")
        if self.kind == "plane":
            if self.point is None or self.normal is None:
                raise ValueError("plane collider needs a point and a normal")
            self.point = np.asarray(self.point, dtype=np.float64).reshape(3)
            n = np.asarray(self.normal, dtype=np.float64).reshape(3)
            norm = np.linalg.norm(n)
            if norm == 0.0:
                raise ValueError("plane normal must be nonzero")
            self.normal = n / norm
        else:
            if self.lo is None or self.hi is None:
                raise ValueError("box collider needs lo and hi corners")
            self.lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
            self.hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
            if np.any(self.hi <= self.lo):
                raise ValueError("box collider needs hi > lo on every axis")

    def inside_and_normals(self, nodes: np.ndarray):
        """(mask, outward normals) for node positions (..., 3)."""
        if self.kind == "plane":
            signed = (nodes - self.point) @ self.normal
            mask = signed < 0.0
            normals = np.broadcast_to(self.normal, nodes.shape)
            return mask, normals
        mask = np.all((nodes >= self.lo) & (nodes <= self.hi), axis=-1)
        # outward normal of the nearest box face
        d_lo = nodes - self.lo
        d_hi = self.hi - nodes
        dists = np.concatenate([d_lo, d_hi], axis=-1)  # (..., 6)
        face = np.argmin(dists, axis=-1)
        normals = np.zeros(nodes.shape)
        for axis in range(3):
            sel = face == axis
            normals[sel, axis] = -1.0
            sel = face == axis + 3
            normals[sel, axis] = 1.0
        return mask, normals


def collide_velocity(v: np.ndarray, normals: np.ndarray, mode: str,
                     friction: float) -> np.ndarray:
    """Project velocities (..., 3) against outward normals (..., 3)."""
    if mode == "sticky":
        return np.zeros_like(v)
    vn = np.einsum("...i,...i->...", v, normals)
    inward = np.minimum(vn, 0.0)
    v_sep = v - inward[..., None] * normals
    if friction > 0.0:
        vt = v_sep - np.maximum(vn, 0.0)[..., None] * normals
        vt_norm = np.linalg.norm(vt, axis=-1)
        drop = friction * (-inward)
        scale = np.zeros_like(vt_norm)
        moving = vt_norm > 0.0
        scale[moving] = np.maximum(0.0, 1.0 - drop[moving] / vt_norm[moving])
        v_sep = vt * scale[..., None] + np.maximum(vn, 0.0)[..., None] * normals
    return v_sep


class MpmSolver:
    """Explicit MPM on a fixed background grid.

    Particles must stay at least one cell away from the grid boundary;
    violating that raises with the offending particle index.
    """

    def __init__(self, grid: MpmGrid, materials, *, colliders=(),
                 transfer: str = "apic", cfl: float = CFL_DEFAULT):
        if transfer not in ("apic", "pic"):
            raise ValueError(f"unknown transfer scheme {transfer!r}")
        if isinstance(materials, ConstitutiveModel):
            materials = [materials]
        if not materials:
            raise ValueError("need at least one material")
        self.grid = grid
        self.materials = list(materials)
        self.colliders = list(colliders)
        self.transfer = transfer
        self.cfl = cfl
        self._nodes = None

    def _node_positions(self):
        if self._nodes is None:
            self._nodes = self.grid.node_positions()
        return self._nodes

    def _check_bounds(self, state: MpmState):
        rel = (state.positions - self.grid.origin) / self.grid.spacing
        dims = np.asarray(self.grid.dims)
        bad = np.any((rel < 1.0) | (rel > dims - 2.0), axis=1)
        if bad.any():
            p = int(np.argmax(bad))
            raise ValueError(
                f"particle {p} at {state.positions[p]} outside the grid "
                f"interior margin (one cell)")

    def mass_epsilon(self, state: MpmState) -> float:
        return MASS_EPS_SCALE * float(np.median(state.masses))

    def stable_dt(self, state: MpmState) -> float:
        c = max(m.wave_speed() for m in self.materials)
        vmax = 0.0
        if len(state):
            vmax = float(np.linalg.norm(state.velocities, axis=1).max())
        return self.cfl * self.grid.spacing / (c + vmax)

    def particle_stress(self, state: MpmState) -> np.ndarray:
        tau = np.zeros((len(state), 3, 3))
        for mid in np.unique(state.materials):
            mask = state.materials == mid
            tau[mask] = stress_kirchhoff(state.deformations[mask], self.materials[mid])
        return tau

    def external_forces(self, state: MpmState, loads) -> np.ndarray:
        total = np.zeros((len(state), 3))
        for load in loads:
            f = load.force(state)
            if f is not None:
                total += f
        return total

    def scatter(self, state: MpmState, loads=()):
        """P2G: returns (grid_m, grid_momentum, grid_force)."""
        self._check_bounds(state)
        nx, ny, nz = self.grid.dims
        grid_m = np.zeros((nx, ny, nz))
        grid_mom = np.zeros((nx, ny, nz, 3))
        grid_f = np.zeros((nx, ny, nz, 3))
        if len(state):
            p2g_scatter(state.positions, state.velocities, state.affines,
                        state.masses, state.volumes, self.particle_stress(state),
                        self.external_forces(state, loads), self.grid.origin,
                        self.grid.spacing, grid_m, grid_mom, grid_f,
                        self.transfer == "apic")
        return grid_m, grid_mom, grid_f

    def grid_update(self, state: MpmState, grid_m, grid_mom, grid_f, dt: float):
        """Forward-Euler node velocities with collisions applied."""
        eps = self.mass_epsilon(state)
        occupied = grid_m > eps
        grid_v = np.zeros(grid_mom.shape)
        grid_v[occupied] = (grid_mom[occupied] + dt * grid_f[occupied]) \
            / grid_m[occupied][:, None]
        nodes = self._node_positions()
        for col in self.colliders:
            mask, normals = col.inside_and_normals(nodes)
            mask = mask & occupied
            if mask.any():
                grid_v[mask] = collide_velocity(grid_v[mask], normals[mask],
                                                col.mode, col.friction)
        return grid_v

    def gather(self, state: MpmState, grid_v, dt: float) -> MpmState:
        """G2P: new velocities/positions, F update, plastic return map."""
        out = state.copy()
        if not len(state):
            out.time += dt
            return out
        grad = np.zeros((len(state), 3, 3))
        g2p_gather(out.positions, grid_v, self.grid.origin, self.grid.spacing,
                   dt, out.velocities, grad)
        out.affines = grad
        eye = np.eye(3)
        f_trial = (eye + dt * grad) @ state.deformations
        for mid in np.unique(state.materials):
            mask = state.materials == mid
            f_new, dgamma = return_map(f_trial[mask], self.materials[mid])
            out.deformations[mask] = f_new
            out.plastic[mask] = state.plastic[mask] + dgamma
        out.time = state.time + dt
        return out

    def _apply_impulses(self, state: MpmState, dt: float, loads) -> MpmState:
        for load in loads:
            if load.kind != "impulse":
                continue
            t0 = load.window[0]
            if state.time <= t0 < state.time + dt:
                inside = load.region.contains(state.positions)
                if inside.any():
                    state = state.copy()
                    state.velocities[inside] += load.vector
        return state

    def substep(self, state: MpmState, dt: float, loads=()) -> MpmState:
        state = self._apply_impulses(state, dt, loads)
        grid_m, grid_mom, grid_f = self.scatter(state, loads)
        grid_v = self.grid_update(state, grid_m, grid_mom, grid_f, dt)
        return self.gather(state, grid_v, dt)

    def step(self, state: MpmState, dt: float, loads=()) -> MpmState:
        """Advance by dt, substepping under the CFL bound when needed."""
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        bound = self.stable_dt(state)
        if dt <= bound:
            return self.substep(state, dt, loads)
        warnings.warn(
            f"dt {dt:.3e} exceeds the CFL bound {bound:.3e}; substepping",
            RuntimeWarning, stacklevel=2)
        remaining = dt
        while remaining > 0.0:
            sdt = min(self.stable_dt(state), remaining)
            # avoid a vanishing trailing step from rounding
            if remaining - sdt < 1e-12 * dt:
                sdt = remaining
            state = self.substep(state, sdt, loads)
            remaining -= sdt
        return state
