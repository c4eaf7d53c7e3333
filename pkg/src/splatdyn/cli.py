"""Command-line driver: the pipeline as subcommands over one scene config.

Subcommands: optimize (refine splats against supervision views), simulate
(MPM-step the splats and render every frame), blend (composite rendered
frames over a background), propagate (fill non-keyframe feature files from
enhanced keyframes), eval (z-score a score table).  Exit codes: 0 success,
1 validation, 2 runtime.  Every subcommand writes a manifest naming the
config hash, library versions, and seed, so identical invocations can be
checked for bit-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, SceneConfig, load_config
from .io import (
    load_splats,
    read_feature,
    read_frame,
    read_png,
    save_splats,
    write_feature,
    write_frame,
    write_png,
)
from .io.image import frame_paths
from .io.particles import dump_particles
from .kinematics import advance, bind, sync
from .metrics import read_scores, write_scores, zscore_normalize
from .mpm.solver import MpmSolver
from .propagate import blend as blend_images
from .propagate import extended_attention, propagate_sequence, select_keyframes
from .refine import load_views, optimize
from .render import render


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, subcommand: str, *, hashed: Path,
                    seed, threads) -> None:
    import numba
    import torch
    payload = {
        "subcommand": subcommand,
        "config_sha256": _sha256(hashed),
        "seed": seed,
        "threads": threads,
        "versions": {
            "splatdyn": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "torch": torch.__version__,
            "numba": numba.__version__,
        },
    }
    path = out_dir / f"{subcommand}_manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _apply_threads(threads) -> None:
    if threads is None:
        return
    if threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {threads}")
    import numba
    import torch
    try:
        numba.set_num_threads(threads)
    except ValueError as err:
        raise ConfigError(f"--threads {threads}: {err}") from None
    torch.set_num_threads(threads)


def _load_scene(args) -> tuple[SceneConfig, Path, int]:
    if args.config is None:
        raise ConfigError(f"{args.command} requires --config")
    config = load_config(args.config)
    out_dir = Path(args.out) if args.out is not None else config.output
    seed = args.seed if args.seed is not None else config.propagation.seed
    if not 0 <= seed < 2 ** 64:
        raise ConfigError(f"--seed must fit an unsigned 64-bit value, got {seed}")
    return config, out_dir, seed


def cmd_optimize(args) -> int:
    config, out_dir, seed = _load_scene(args)
    if config.views is None:
        raise ConfigError("optimize requires a views directory "
                          "(config key 'views')")
    cloud = load_splats(config.splats)
    views = load_views(config.views)
    refined, trace = optimize(cloud, views, config.schedule)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_splats(refined, out_dir / "refined.ply")
    (out_dir / "trace.json").write_text(json.dumps(trace, indent=2) + "\n")
    _write_manifest(out_dir, "optimize", hashed=args.config, seed=seed,
                    threads=args.threads)
    print(f"optimize: {len(refined)} kernels refined over "
          f"{config.schedule.epochs} epochs -> {out_dir / 'refined.ply'}")
    return 0


def cmd_simulate(args) -> int:
    config, out_dir, seed = _load_scene(args)
    cloud = load_splats(config.splats)
    solver = MpmSolver(config.grid, config.material,
                       colliders=config.colliders,
                       transfer=config.simulation.transfer,
                       cfl=config.simulation.cfl)
    state, binding = bind(cloud, config.grid, config.material,
                          covariance_mode=config.simulation.covariance_mode)
    camera = config.cameras.render_camera()
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    particles_dir = out_dir / "particles"
    if config.simulation.dump_particles:
        particles_dir.mkdir(parents=True, exist_ok=True)
    dt = config.simulation.frame_dt
    for index in range(config.simulation.frames):
        if index:
            state = advance(solver, state, binding, dt, config.loads)
        write_frame(render(sync(binding, state), camera), frames_dir, index)
        if config.simulation.dump_particles:
            dump_particles(state.mpm,
                           particles_dir / f"particles_{index:05d}.bin")
    _write_manifest(out_dir, "simulate", hashed=args.config, seed=seed,
                    threads=args.threads)
    print(f"simulate: {config.simulation.frames} frames of {len(cloud)} "
          f"kernels ({len(state.mpm)} particles) -> {frames_dir}")
    return 0


def _count_frames(frames_dir: Path) -> int:
    index = 0
    while Path(frame_paths(frames_dir, index)["color"]).is_file():
        index += 1
    return index


def cmd_blend(args) -> int:
    config, out_dir, seed = _load_scene(args)
    frames_dir = Path(config.blend.frames_dir) if config.blend.frames_dir \
        else out_dir / "frames"
    n_frames = _count_frames(frames_dir)
    if n_frames == 0:
        raise ConfigError(f"no rendered frames under {frames_dir}; "
                          "run simulate first or set blend.frames_dir")
    if isinstance(config.blend.background, str):
        background = read_png(config.blend.background)
    else:
        background = None  # constant color, sized after the first frame
    blended_dir = out_dir / "blended"
    blended_dir.mkdir(parents=True, exist_ok=True)
    for index in range(n_frames):
        frame = read_frame(frames_dir, index)
        if background is None:
            background = np.broadcast_to(
                np.asarray(config.blend.background),
                frame.color.shape).copy()
        composite = blend_images(frame.color, frame.alpha.clip(0.0, 1.0),
                                 background)
        write_png(composite, blended_dir / f"frame_{index:05d}.png")
    _write_manifest(out_dir, "blend", hashed=args.config, seed=seed,
                    threads=args.threads)
    print(f"blend: {n_frames} frames composited -> {blended_dir}")
    return 0


def _feature_path(directory: Path, frame: int, role: str) -> Path:
    return directory / f"frame_{frame:05d}_{role}.feat"


def cmd_propagate(args) -> int:
    config, out_dir, seed = _load_scene(args)
    if args.features is None:
        raise ConfigError("propagate requires --features <dir> holding "
                          "frame_XXXXX_coarse.feat files")
    features_dir = Path(args.features)
    if not features_dir.is_dir():
        raise ConfigError(f"--features {features_dir} is not a directory")
    n_frames = 0
    while _feature_path(features_dir, n_frames + 1, "coarse").is_file():
        n_frames += 1
    if n_frames == 0:
        raise ConfigError(f"no frame_00001_coarse.feat under {features_dir}; "
                          "coarse features must be numbered from 1")

    keyframes = select_keyframes(n_frames, config.propagation.keyframe_interval,
                                 seed=seed)
    coarse, tags = {}, set()
    for j in range(1, n_frames + 1):
        coarse[j], tag = read_feature(_feature_path(features_dir, j, "coarse"))
        tags.add(tag)
    if len(tags) > 1:
        raise ConfigError(f"coarse features mix layer tags {sorted(tags)}")

    problems = []
    enhanced, out_tag = {}, None
    for j in keyframes:
        path = _feature_path(features_dir, j, "enhanced")
        if not path.is_file():
            problems.append(f"keyframe {j}: missing {path.name}")
            continue
        enhanced[j], out_tag = read_feature(path)
        if enhanced[j].reshape(-1, enhanced[j].shape[-1]).shape[0] != \
                coarse[j].reshape(-1, coarse[j].shape[-1]).shape[0]:
            problems.append(f"keyframe {j}: enhanced grid does not match "
                            "the coarse token count")
    qk_present = [j for j in keyframes
                  if _feature_path(features_dir, j, "q").is_file()
                  or _feature_path(features_dir, j, "k").is_file()]
    mix = len(qk_present) == len(keyframes) and all(
        _feature_path(features_dir, j, "q").is_file()
        and _feature_path(features_dir, j, "k").is_file() for j in keyframes)
    if qk_present and not mix:
        problems.append("query/key taps must be supplied for every keyframe "
                        "(files frame_XXXXX_q.feat and _k.feat) or none")
    if problems:
        raise ConfigError("invalid feature directory:\n  " +
                          "\n  ".join(problems))

    if mix:
        order = list(keyframes)
        qs = [read_feature(_feature_path(features_dir, j, "q"))[0] for j in order]
        ks = [read_feature(_feature_path(features_dir, j, "k"))[0] for j in order]
        vs = [enhanced[j] for j in order]
        mixed = extended_attention(qs, ks, vs)
        enhanced = dict(zip(order, mixed))

    outputs = propagate_sequence(coarse, enhanced, keyframes)
    propagated_dir = out_dir / "propagated"
    propagated_dir.mkdir(parents=True, exist_ok=True)
    for j in range(1, n_frames + 1):
        write_feature(outputs[j], out_tag,
                      _feature_path(propagated_dir, j, "enhanced"))
    (out_dir / "keyframes.json").write_text(json.dumps({
        "n_frames": n_frames,
        "interval": config.propagation.keyframe_interval,
        "seed": seed,
        "indices": [int(j) for j in keyframes],
    }, indent=2) + "\n")
    _write_manifest(out_dir, "propagate", hashed=args.config, seed=seed,
                    threads=args.threads)
    print(f"propagate: {len(keyframes)} keyframes -> {n_frames} frames "
          f"under {propagated_dir}")
    return 0


def cmd_eval(args) -> int:
    if args.scores is None:
        raise ConfigError("eval requires --scores <csv>")
    scores_path = Path(args.scores)
    if not scores_path.is_file():
        raise ConfigError(f"--scores {scores_path} does not exist")
    table = read_scores(scores_path)
    normalized = zscore_normalize(table)
    means = normalized.values.mean(axis=1)
    out_dir = Path(args.out) if args.out is not None else scores_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    write_scores(normalized, out_dir / "normalized.csv")
    with open(out_dir / "model_means.csv", "w", newline="") as fh:
        fh.write("method,mean_z\n")
        for name, mean in zip(normalized.methods, means):
            fh.write(f"{name},{mean!r}\n")
    _write_manifest(out_dir, "eval", hashed=scores_path,
                    seed=args.seed if args.seed is not None else 0,
                    threads=args.threads)
    for name, mean in zip(normalized.methods, means):
        print(f"{name}\t{mean:+.4f}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="splatdyn",
                     description="Gaussian-splat dynamics pipeline")
    parser.add_argument("--version", action="version",
                        version=f"splatdyn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = (
        ("optimize", cmd_optimize, "refine splats against supervision views"),
        ("simulate", cmd_simulate, "step the splats and render every frame"),
        ("blend", cmd_blend, "composite rendered frames over a background"),
        ("propagate", cmd_propagate, "fill non-keyframe features from "
                                     "enhanced keyframes"),
        ("eval", cmd_eval, "z-score normalize a score table"),
    )
    for name, func, help_text in commands:
        sp = sub.add_parser(name, help=help_text)
        if name != "eval":
            sp.add_argument("--config", type=Path, help="scene config JSON")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int,
                        help="worker threads for compiled sections")
        sp.add_argument("--out", type=Path,
                        help="output directory (default: config output)")
        if name == "propagate":
            sp.add_argument("--features", type=Path,
                            help="directory of coarse/enhanced feature files")
        if name == "eval":
            sp.add_argument("--scores", type=Path, help="score table CSV")
        sp.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    command = "splatdyn"
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        _apply_threads(args.threads)
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"{command} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
