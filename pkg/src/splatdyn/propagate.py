"""Model-free enhancement math: blending, keyframe attention, propagation.

Everything here operates on plain feature arrays so a model host can drive
it: alpha blending of a rendered frame over a background, scaled-dot-product
attention, extended attention whose keys/values concatenate over keyframes,
nearest-neighbor token correspondence under cosine distance, and the
weighted two-keyframe propagation that fills in the non-keyframe outputs.
No sampler or denoiser lives here; the named layer taps and the injection
schedule describe where a host plugs these tensors in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# hook points a model host can tap per decoder layer, per sampling step
LAYER_TAPS = ("residual-out", "attn-Q", "attn-K", "attn-V", "attn-out")

STAGES = ("coarse", "enhanced")


def _tokens(x, name: str) -> tuple[np.ndarray, tuple]:
    """Flatten a (n, d) or (h, w, d) token grid to (n, d); returns grid shape."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-1] == 0:
        raise ValueError(f"{name}: expected token vectors of dimension d > 0, "
                         f"got shape {x.shape}")
    return x.reshape(-1, x.shape[-1]), x.shape[:-1]


@dataclass(frozen=True)
class FeatureMap:
    """A grid of token vectors tapped from one frame at one layer."""

    frame: int
    tokens: np.ndarray          # (..., d) spatial grid of d-vectors
    layer: str
    stage: str = "coarse"

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float64)
        object.__setattr__(self, "tokens", tokens)
        if tokens.ndim < 2 or tokens.shape[-1] == 0:
            raise ValueError(f"tokens must be (..., d) with d > 0, got {tokens.shape}")
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if not self.layer:
            raise ValueError("layer tag must be a nonempty string")

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]


@dataclass(frozen=True)
class KeyframeSet:
    """Sorted keyframe indices over a 1-based sequence of n_frames frames."""

    indices: tuple
    n_frames: int

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        problems = []
        if self.n_frames < 1:
            problems.append(f"n_frames must be >= 1, got {self.n_frames}")
        if not self.indices:
            problems.append("at least one keyframe is required")
        else:
            if self.indices[0] != 1:
                problems.append("the first frame must be a keyframe")
            if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
                problems.append("keyframe indices must be strictly increasing")
            if self.indices[-1] > self.n_frames:
                problems.append(f"keyframe {self.indices[-1]} is past the last "
                                f"frame ({self.n_frames})")
        if problems:
            raise ValueError("; ".join(problems))

    def __contains__(self, frame: int) -> bool:
        return frame in self.indices

    def __iter__(self):
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def neighbors(self, frame: int) -> tuple[int, int, float]:
        """Past keyframe, future keyframe, and the future's weight for frame.

        Interior non-keyframes interpolate linearly in time,
        w = (j - j_past) / (j_future - j_past); frames after the last
        keyframe clamp to it with w = 0, and a keyframe is its own pair.
        """
        if not 1 <= frame <= self.n_frames:
            raise ValueError(f"frame {frame} outside 1..{self.n_frames}")
        if frame in self.indices:
            return frame, frame, 0.0
        past = max(i for i in self.indices if i < frame)
        later = [i for i in self.indices if i > frame]
        if not later:
            return self.indices[-1], self.indices[-1], 0.0
        future = min(later)
        return past, future, (frame - past) / (future - past)


@dataclass(frozen=True)
class InjectionSchedule:
    """When along the sampling trajectory injected features/attention apply.

    tau_f and tau_A are fractions of the trajectory; the remaining fields
    record the host-side sampler defaults (inversion length/stride and
    guidance scales) so a run manifest can reproduce them.
    """

    tau_f: float = 0.8
    tau_a: float = 0.8
    total_steps: int = 50
    inversion_steps: int = 1000
    inversion_stride: int = 20
    guidance_coarse: float = 1.0
    guidance_enhanced: float = 7.5

    def __post_init__(self):
        problems = []
        if not 0.0 < self.tau_f < 1.0:
            problems.append(f"tau_f must be in (0, 1), got {self.tau_f}")
        if not 0.0 < self.tau_a < 1.0:
            problems.append(f"tau_a must be in (0, 1), got {self.tau_a}")
        if self.total_steps < 1:
            problems.append(f"total_steps must be >= 1, got {self.total_steps}")
        if self.inversion_steps < 1:
            problems.append(f"inversion_steps must be >= 1, got {self.inversion_steps}")
        if self.inversion_stride < 1:
            problems.append(f"inversion_stride must be >= 1, got {self.inversion_stride}")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass(frozen=True)
class InjectionGate:
    inject_features: bool
    inject_attention: bool


def injection_gate(step: int, total: int, schedule: InjectionSchedule) -> InjectionGate:
    """Whether feature/attention injection is active at a sampling step.

    Injection applies while step/total is below the schedule fraction
    (decoder layers only; the host enforces the layer restriction).
    """
    if total < 1:
        raise ValueError(f"total must be >= 1, got {total}")
    if not 0 <= step < total:
        raise ValueError(f"step {step} outside 0..{total - 1}")
    frac = step / total
    return InjectionGate(inject_features=frac < schedule.tau_f,
                         inject_attention=frac < schedule.tau_a)


def blend(frame: np.ndarray, alpha: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Per-pixel convex combination: alpha * frame + (1 - alpha) * background."""
    frame = np.asarray(frame, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if background.shape != frame.shape:
        raise ValueError(f"background shape {background.shape} does not match "
                         f"frame shape {frame.shape}")
    if alpha.shape != frame.shape[:-1]:
        raise ValueError(f"alpha shape {alpha.shape} does not match the frame's "
                         f"pixel grid {frame.shape[:-1]}")
    if alpha.size and (alpha.min() < 0.0 or alpha.max() > 1.0):
        raise ValueError("alpha values must lie in [0, 1]")
    a = alpha[..., None]
    return a * frame + (1.0 - a) * background


def attention_weights(queries: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Row-stochastic Softmax(Q K^T / sqrt(d)) with the usual max-shift."""
    q, _ = _tokens(queries, "queries")
    k, _ = _tokens(keys, "keys")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"query dim {q.shape[1]} != key dim {k.shape[1]}")
    logits = q @ k.T / np.sqrt(q.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    return weights / weights.sum(axis=1, keepdims=True)


def attention(queries: np.ndarray, keys: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Scaled dot-product attention output, shaped like the query grid."""
    q, grid = _tokens(queries, "queries")
    k, _ = _tokens(keys, "keys")
    v, _ = _tokens(values, "values")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"{k.shape[0]} keys but {v.shape[0]} value rows")
    out = attention_weights(q, k) @ v
    return out.reshape(grid + (v.shape[1],))


def extended_attention(queries: Sequence[np.ndarray], keys: Sequence[np.ndarray],
                       values: Sequence[np.ndarray]) -> list:
    """Per-keyframe attention over keys/values concatenated across keyframes.

    queries/keys come from the coarse stage, values from the enhanced stage,
    one array per keyframe with a shared grid shape.  Each keyframe's output
    attends to every keyframe's tokens at once.
    """
    if not (len(queries) == len(keys) == len(values)) or not queries:
        raise ValueError("queries, keys and values must be nonempty lists "
                         "of equal length, one entry per keyframe")
    flat_k = []
    flat_v = []
    for i, (k, v) in enumerate(zip(keys, values)):
        kt, k_grid = _tokens(k, f"keys[{i}]")
        vt, v_grid = _tokens(v, f"values[{i}]")
        if k_grid != v_grid:
            raise ValueError(f"keyframe {i}: key grid {k_grid} != value grid {v_grid}")
        if i and (kt.shape != flat_k[0].shape or vt.shape != flat_v[0].shape):
            raise ValueError(f"keyframe {i}: token shape differs from keyframe 0")
        flat_k.append(kt)
        flat_v.append(vt)
    all_keys = np.concatenate(flat_k, axis=0)
    all_values = np.concatenate(flat_v, axis=0)
    return [attention(q, all_keys, all_values) for q in queries]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    # zero vectors stay zero: their cosine distance to anything is then 1
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0.0)


def nn_correspondence(features: np.ndarray, key_features: np.ndarray) -> np.ndarray:
    """Per-token argmin of cosine distance into a keyframe's token grid.

    Returns linear indices into the flattened keyframe grid, shaped like the
    query grid.  Ties go to the smallest index; a zero vector on either side
    has distance 1 to everything.
    """
    f, grid = _tokens(features, "features")
    k, _ = _tokens(key_features, "key_features")
    if f.shape[1] != k.shape[1]:
        raise ValueError(f"feature dim {f.shape[1]} != keyframe dim {k.shape[1]}")
    distance = 1.0 - _unit_rows(f) @ _unit_rows(k).T
    return np.argmin(distance, axis=1).reshape(grid)


@dataclass(frozen=True)
class CorrespondenceField:
    """Token correspondences from one frame into its two neighbor keyframes."""

    frame: int
    nu_future: np.ndarray   # linear indices into the future keyframe's grid
    nu_past: np.ndarray     # linear indices into the past keyframe's grid
    weight: float           # w_j, the future keyframe's share

    def __post_init__(self):
        if self.nu_future.shape != self.nu_past.shape:
            raise ValueError("nu_future and nu_past must share the grid shape")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"weight must lie in [0, 1], got {self.weight}")


def correspondence_field(frame_features: np.ndarray, past_features: np.ndarray,
                         future_features: np.ndarray, frame: int,
                         keyframes: KeyframeSet) -> CorrespondenceField:
    """Match a frame's coarse tokens into both neighbor keyframes' grids."""
    past, future, weight = keyframes.neighbors(frame)
    del past, future
    return CorrespondenceField(
        frame=frame,
        nu_future=nn_correspondence(frame_features, future_features),
        nu_past=nn_correspondence(frame_features, past_features),
        weight=weight,
    )


def propagate(future_values: np.ndarray, past_values: np.ndarray,
              corr: CorrespondenceField) -> np.ndarray:
    """Weighted two-keyframe lookup: w * future[nu+] + (1 - w) * past[nu-]."""
    fv, _ = _tokens(future_values, "future_values")
    pv, _ = _tokens(past_values, "past_values")
    if fv.shape[1] != pv.shape[1]:
        raise ValueError(f"future value dim {fv.shape[1]} != past {pv.shape[1]}")
    nu_f = np.asarray(corr.nu_future).reshape(-1)
    nu_p = np.asarray(corr.nu_past).reshape(-1)
    if nu_f.size and (nu_f.min() < 0 or nu_f.max() >= fv.shape[0]):
        raise ValueError("future correspondence index out of range")
    if nu_p.size and (nu_p.min() < 0 or nu_p.max() >= pv.shape[0]):
        raise ValueError("past correspondence index out of range")
    # lerp form: exact when both lookups agree and when w is 0 (tail clamp)
    past_vals = pv[nu_p]
    out = past_vals + corr.weight * (fv[nu_f] - past_vals)
    return out.reshape(corr.nu_future.shape + (fv.shape[1],))


def propagate_sequence(coarse: dict, enhanced: dict, keyframes: KeyframeSet) -> dict:
    """Enhanced outputs for every frame: passthrough on keyframes, lookup off.

    ``coarse`` maps frame index -> coarse feature grid for all frames;
    ``enhanced`` maps keyframe index -> enhanced output grid.
    """
    missing = [j for j in keyframes if j not in enhanced]
    if missing:
        raise ValueError(f"enhanced outputs missing for keyframes {missing}")
    out = {}
    for j in range(1, keyframes.n_frames + 1):
        if j in keyframes:
            out[j] = np.asarray(enhanced[j], dtype=np.float64)
            continue
        if j not in coarse:
            raise ValueError(f"coarse features missing for frame {j}")
        past, future, _ = keyframes.neighbors(j)
        for need in (past, future):
            if need not in coarse:
                raise ValueError(f"coarse features missing for keyframe {need}")
        corr = correspondence_field(coarse[j], coarse[past], coarse[future],
                                    j, keyframes)
        out[j] = propagate(enhanced[future], enhanced[past], corr)
    return out


def select_keyframes(n_frames: int, interval: int,
                     rng: Optional[np.random.Generator] = None,
                     seed: Optional[int] = None) -> KeyframeSet:
    """Frame 1 plus one seeded pick per consecutive window of ``interval``.

    interval >= n_frames collapses to just frame 1; interval 1 makes every
    frame a keyframe.
    """
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    if interval >= n_frames:
        return KeyframeSet((1,), n_frames)
    if rng is None:
        rng = np.random.default_rng(seed)
    picks = {1}
    for start in range(1, n_frames + 1, interval):
        end = min(start + interval, n_frames + 1)
        picks.add(int(rng.integers(start, end)))
    return KeyframeSet(tuple(sorted(picks)), n_frames)
