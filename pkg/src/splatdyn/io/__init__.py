"""File formats: splat PLY, PNG/PFM frames, particle dumps, feature blobs, cameras."""

from .cameras import load_camera, save_camera
from .features import read_feature, write_feature
from .image import (
    frame_paths,
    read_frame,
    read_pfm,
    read_png,
    write_frame,
    write_pfm,
    write_png,
)
from .particles import dump_particles, load_particles
from .ply import load_splats, save_splats

__all__ = [
    "dump_particles",
    "frame_paths",
    "load_camera",
    "load_particles",
    "load_splats",
    "read_feature",
    "read_frame",
    "read_pfm",
    "read_png",
    "save_camera",
    "save_splats",
    "write_feature",
    "write_frame",
    "write_pfm",
    "write_png",
]
