"""Synthetic spatio-temporal tasks.

Every generator is a pure function of its arguments: the same seed yields a
bitwise-identical sequence.  Frames are float64 arrays of shape [1, H, W]
with values in [0, 1]; geometry masks are hard binary (no anti-aliasing).

Tasks:

* moving geometry: one of five shapes translating along one of eight
  compass directions, labelled with both the shape class and the direction
  class (or a seeded random walk when motion is disordered);
* star and rhombus: a long rhombus stream with a single star frame, labelled
  per frame with the distance (in frames) back to the star, a sentinel
  before it appears;
* diffusing blob: a Gaussian blob drifting with a constant velocity while
  its spread grows, split into observed input frames and forecast targets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateInputError, GenerationError
from .pgm import write_pgm

SHAPES = ("square", "triangle", "circle", "star", "rhombus")

# (row step, column step) units; index order walks the compass anticlockwise
# starting at east.
DIRECTIONS = (
    (0, 1),    # east
    (-1, 1),   # north-east
    (-1, 0),   # north
    (-1, -1),  # north-west
    (0, -1),   # west
    (1, -1),   # south-west
    (1, 0),    # south
    (1, 1),    # south-east
)


@dataclass
class GeometrySpec:
    """Shape identity and motion of a moving-geometry sequence."""

    shape: str
    direction: int | None
    speed: int
    size: int

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise GenerationError(f"unknown shape {self.shape!r}, pick one of {SHAPES}")
        if self.direction is not None and not (0 <= self.direction < len(DIRECTIONS)):
            raise GenerationError(
                f"direction must lie in [0, {len(DIRECTIONS)}), got {self.direction}"
            )
        if self.speed < 0:
            raise GenerationError(f"speed must be >= 0, got {self.speed}")
        if self.size < 2:
            raise GenerationError(f"size must be >= 2 pixels, got {self.size}")


@dataclass
class FrameSequence:
    """Frames plus labels and provenance metadata."""

    frames: list[np.ndarray]
    labels: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)


def render_shape(shape: str, row: int, col: int, size: int, h: int, w: int) -> np.ndarray:
    """Hard binary mask of a shape centred at (row, col) with half-extent size."""
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy = rr - row
    dx = cc - col
    r = size
    if shape == "square":
        mask = (np.abs(dx) <= r) & (np.abs(dy) <= r)
    elif shape == "circle":
        mask = dx * dx + dy * dy <= r * r
    elif shape == "rhombus":
        mask = np.abs(dx) + np.abs(dy) <= r
    elif shape == "triangle":
        mask = (dy >= -r) & (dy <= r) & (np.abs(dx) * 2 <= dy + r)
    elif shape == "star":
        core = int(np.ceil(0.55 * r))
        mask = (np.abs(dx) + np.abs(dy) <= r) | ((np.abs(dx) <= core) & (np.abs(dy) <= core))
    else:
        raise GenerationError(f"unknown shape {shape!r}")
    return mask.astype(np.float64)


def _feasible_interval(extent: int, limit: int, total_step: int) -> tuple[int, int]:
    """Valid start coordinates so extent stays inside [0, limit) across motion."""
    lo = extent - min(0, total_step)
    hi = limit - 1 - extent - max(0, total_step)
    return lo, hi


def gen_moving_geometry(
    spec: GeometrySpec,
    t_steps: int = 16,
    h: int = 32,
    w: int = 32,
    seed: int = 0,
    disordered: bool = False,
) -> FrameSequence:
    """Translate a shape across the frame; the full trajectory stays inside.

    With ``disordered`` the straight trajectory is replaced by a seeded
    random walk (per-axis steps in [-speed, speed]) and the direction label
    is None.  Zero speed is rejected because the direction label would be
    undefined.
    """
    if t_steps < 1:
        raise GenerationError(f"need at least one frame, got {t_steps}")
    if spec.speed == 0:
        raise GenerationError("speed 0 leaves the direction label undefined")
    rng = np.random.default_rng(seed)
    r = spec.size

    if disordered:
        lo_r, hi_r = _feasible_interval(r, h, 0)
        lo_c, hi_c = _feasible_interval(r, w, 0)
        if lo_r > hi_r or lo_c > hi_c:
            raise GenerationError(
                f"size {r} does not fit a {h}x{w} frame"
            )
        row = int(rng.integers(lo_r, hi_r + 1))
        col = int(rng.integers(lo_c, hi_c + 1))
        positions = []
        for _ in range(t_steps):
            positions.append((row, col))
            row = int(np.clip(row + rng.integers(-spec.speed, spec.speed + 1), lo_r, hi_r))
            col = int(np.clip(col + rng.integers(-spec.speed, spec.speed + 1), lo_c, hi_c))
        direction_label = None
    else:
        if spec.direction is None:
            raise GenerationError("straight motion needs a direction index")
        dr, dc = DIRECTIONS[spec.direction]
        step_r, step_c = dr * spec.speed, dc * spec.speed
        lo_r, hi_r = _feasible_interval(r, h, step_r * (t_steps - 1))
        lo_c, hi_c = _feasible_interval(r, w, step_c * (t_steps - 1))
        if lo_r > hi_r or lo_c > hi_c:
            raise GenerationError(
                f"no feasible start: size {r}, speed {spec.speed}, {t_steps} steps in {h}x{w}"
            )
        row = int(rng.integers(lo_r, hi_r + 1))
        col = int(rng.integers(lo_c, hi_c + 1))
        positions = [(row + t * step_r, col + t * step_c) for t in range(t_steps)]
        direction_label = spec.direction

    frames = [
        render_shape(spec.shape, pr, pc, r, h, w)[None, :, :] for pr, pc in positions
    ]
    return FrameSequence(
        frames=frames,
        labels={"shape": SHAPES.index(spec.shape), "direction": direction_label},
        meta={
            "generator": "moving_geometry",
            "seed": seed,
            "shape": spec.shape,
            "direction": spec.direction,
            "speed": spec.speed,
            "size": spec.size,
            "disordered": disordered,
            "positions": positions,
        },
    )


def gen_star_rhombus(
    t_steps: int = 60,
    star_index: int = 0,
    h: int = 32,
    w: int = 32,
    seed: int = 0,
    size: int = 6,
    jitter: int = 3,
) -> FrameSequence:
    """Rhombus stream with one star frame and per-frame distance labels.

    label[t] = t - star_index for t >= star_index, and -1 (not yet seen)
    before.  Shape centres jitter a few pixels per frame so sequences with
    equal star positions still differ.
    """
    if not (0 <= star_index < t_steps):
        raise GenerationError(f"star_index must lie in [0, {t_steps}), got {star_index}")
    rng = np.random.default_rng(seed)
    cy, cx = h // 2, w // 2
    frames = []
    for t in range(t_steps):
        jr = int(rng.integers(-jitter, jitter + 1))
        jc = int(rng.integers(-jitter, jitter + 1))
        shape = "star" if t == star_index else "rhombus"
        frames.append(render_shape(shape, cy + jr, cx + jc, size, h, w)[None, :, :])
    labels = np.array([t - star_index if t >= star_index else -1 for t in range(t_steps)], dtype=np.int64)
    return FrameSequence(
        frames=frames,
        labels={"distance": labels},
        meta={
            "generator": "star_rhombus",
            "seed": seed,
            "star_index": star_index,
            "size": size,
            "jitter": jitter,
        },
    )


def gen_diffusing_blob(
    t_in: int = 5,
    t_out: int = 5,
    h: int = 32,
    w: int = 32,
    seed: int = 0,
    velocity: tuple[float, float] | None = None,
    sigma0: float | None = None,
    rate: float | None = None,
) -> tuple[FrameSequence, FrameSequence]:
    """Drifting, spreading Gaussian blob split into inputs and targets.

    Intensities of all frames are normalised by the min/max taken over the
    input frames only.  Velocity, initial spread and growth rate are sampled
    from ranges that keep the blob's 3.5-sigma disc inside the frame, or may
    be pinned explicitly.
    """
    if t_in < 1 or t_out < 1:
        raise GenerationError(f"need t_in >= 1 and t_out >= 1, got ({t_in}, {t_out})")
    rng = np.random.default_rng(seed)
    total = t_in + t_out
    cy = (h - 1) / 2 + rng.uniform(-1.5, 1.5)
    cx = (w - 1) / 2 + rng.uniform(-1.5, 1.5)
    if velocity is None:
        velocity = (rng.uniform(-0.55, 0.55), rng.uniform(-0.55, 0.55))
    if sigma0 is None:
        sigma0 = rng.uniform(1.6, 2.2)
    if rate is None:
        rate = rng.uniform(0.0, 0.05)
    if sigma0 <= 0:
        raise GenerationError(f"sigma0 must be positive, got {sigma0}")
    if rate < 0:
        raise GenerationError(f"diffusion rate must be >= 0, got {rate}")

    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    raw = []
    for t in range(total):
        sy = cy + velocity[0] * t
        sx = cx + velocity[1] * t
        sigma = sigma0 + rate * t
        raw.append(np.exp(-((rr - sy) ** 2 + (cc - sx) ** 2) / (2.0 * sigma * sigma)))

    stack_in = np.stack(raw[:t_in])
    mn, mx = stack_in.min(), stack_in.max()
    if mx - mn <= 0:
        raise DegenerateInputError("input frames are constant, cannot normalise")
    frames = [((f - mn) / (mx - mn))[None, :, :] for f in raw]

    meta = {
        "generator": "diffusing_blob",
        "seed": seed,
        "center": (cy, cx),
        "velocity": tuple(velocity),
        "sigma0": float(sigma0),
        "rate": float(rate),
        "t_in": t_in,
        "t_out": t_out,
    }
    inputs = FrameSequence(frames=frames[:t_in], labels={}, meta=meta)
    targets = FrameSequence(frames=frames[t_in:], labels={}, meta=meta)
    return inputs, targets


def frame_difference_targets(frames: list[np.ndarray]) -> list[np.ndarray]:
    """Per-step temporal targets: zeros at t=0, frame deltas afterwards."""
    if not frames:
        raise GenerationError("frame_difference_targets needs at least one frame")
    targets = [np.zeros_like(frames[0])]
    for t in range(1, len(frames)):
        targets.append(frames[t] - frames[t - 1])
    return targets


# ---------------------------------------------------------------------------
# dataset export
# ---------------------------------------------------------------------------

def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def export_dataset(task: str, out_dir, count: int = 8, seed: int = 0, t_steps: int | None = None) -> Path:
    """Write sequences as directories of PGM frames plus a JSON manifest.

    Returns the manifest path.  Supported tasks: geometry_shape,
    geometry_direction, star_rhombus, blob_forecast.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root_rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        s = int(root_rng.integers(0, 2 ** 31 - 1))
        rng = np.random.default_rng(s)
        if task in ("geometry_shape", "geometry_direction"):
            t_total = t_steps or 16
            size = int(rng.integers(4, 8))
            # keep the whole trajectory inside the frame
            max_speed = max(1, (30 - 2 * size) // max(1, t_total - 1))
            spec = GeometrySpec(
                shape=SHAPES[int(rng.integers(0, len(SHAPES)))],
                direction=int(rng.integers(0, len(DIRECTIONS))),
                speed=int(rng.integers(1, max_speed + 1)),
                size=size,
            )
            seq = gen_moving_geometry(spec, t_steps=t_total, seed=s)
            frames, labels, meta = seq.frames, seq.labels, seq.meta
        elif task == "star_rhombus":
            t_total = t_steps or 60
            seq = gen_star_rhombus(
                t_steps=t_total,
                star_index=int(rng.integers(0, t_total)),
                seed=s,
            )
            frames, labels, meta = seq.frames, seq.labels, seq.meta
        elif task == "blob_forecast":
            inputs, targets = gen_diffusing_blob(seed=s)
            frames = inputs.frames + targets.frames
            labels, meta = {}, inputs.meta
        else:
            raise ConfigError(f"unknown export task {task!r}")

        seq_dir = out / f"seq_{i:05d}"
        seq_dir.mkdir(exist_ok=True)
        for t, frame in enumerate(frames):
            write_pgm(seq_dir / f"frame_{t:03d}.pgm", frame[0])
        records.append({
            "dir": seq_dir.name,
            "frames": len(frames),
            "labels": _jsonable(labels),
            "meta": _jsonable(meta),
        })

    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({
        "task": task,
        "seed": seed,
        "count": count,
        "sequences": records,
    }, indent=2))
    return manifest
