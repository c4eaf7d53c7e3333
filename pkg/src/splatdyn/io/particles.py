"""Binary particle dumps: full MPM state snapshots.

Layout (little-endian): u64 particle count, f64 simulation time, then one
packed 220-byte record per particle: position (3 f64), velocity (3 f64),
deformation (9 f64, row-major), affine (9 f64, row-major), mass (f64),
volume (f64), plastic flow (f64), material index (u32).  No padding.
"""

from __future__ import annotations

import numpy as np

from ..mpm import MpmState

RECORD_DTYPE = np.dtype([
    ("position", "<f8", (3,)),
    ("velocity", "<f8", (3,)),
    ("deformation", "<f8", (3, 3)),
    ("affine", "<f8", (3, 3)),
    ("mass", "<f8"),
    ("volume", "<f8"),
    ("plastic", "<f8"),
    ("material", "<u4"),
])

_HEADER = np.dtype([("count", "<u8"), ("time", "<f8")])


def dump_particles(state: MpmState, path) -> None:
    records = np.empty(len(state), dtype=RECORD_DTYPE)
    records["position"] = state.positions
    records["velocity"] = state.velocities
    records["deformation"] = state.deformations
    records["affine"] = state.affines
    records["mass"] = state.masses
    records["volume"] = state.volumes
    records["plastic"] = state.plastic
    records["material"] = state.materials
    header = np.array([(len(state), state.time)], dtype=_HEADER)
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(records.tobytes())


def load_particles(path) -> MpmState:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.itemsize:
        raise ValueError(f"{path}: too short for a particle dump header")
    header = np.frombuffer(blob, dtype=_HEADER, count=1)[0]
    count = int(header["count"])
    expected = _HEADER.itemsize + count * RECORD_DTYPE.itemsize
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for "
                         f"{count} particles, found {len(blob)}")
    records = np.frombuffer(blob, dtype=RECORD_DTYPE, count=count,
                            offset=_HEADER.itemsize)
    return MpmState(
        positions=records["position"].astype(np.float64),
        velocities=records["velocity"].astype(np.float64),
        deformations=records["deformation"].astype(np.float64),
        affines=records["affine"].astype(np.float64),
        masses=records["mass"].astype(np.float64),
        volumes=records["volume"].astype(np.float64),
        plastic=records["plastic"].astype(np.float64),
        materials=records["material"].astype(np.int32),
        time=float(header["time"]),
    )
