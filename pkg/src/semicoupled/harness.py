"""Config-driven training and evaluation runs.

A run is described by a JSON config with sections ``model``, ``data``,
``ltsc``, ``schedule``, ``optimizer``, ``subgoals`` and ``ablation``; every
field has a per-task default, so a minimal config is just a task name and a
seed.  :func:`run_experiment` trains the network for the configured step
budget and leaves a self-contained artifact directory:

    config.json      resolved configuration actually used
    metrics.csv      one row per training step (losses, gate probabilities,
                     periodic evaluation metrics)
    checkpoint.bin   parameters, optimizer moments, schedule and rng states
    partition.json   chunk spans when long-sequence chunking is active
    featuremaps/     spatial / temporal / combined branch snapshots as PGM

Runs are deterministic for a fixed config: every random choice flows from
the config seed, and no artifact embeds a timestamp, so rerunning a config
reproduces the files bit for bit.  Output paths resolve relative to the
``SEMICOUPLED_OUTPUT_ROOT`` environment variable when it is set.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ltsc as ltsc_mod
from . import metrics as metrics_mod
from . import tasks
from .autodiff import Tensor, backward, no_grad, ops
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ContractError, NumericError
from .network import (
    GatePair,
    NetState,
    SemiCoupledNet,
    build_gates,
    build_net,
    decode_autoregressive,
    head_apply,
    run_sequence,
    sequence_logits,
    zero_state,
)
from .optim import (
    AccumulationBuffer,
    AdamState,
    SwitchSchedule,
    adam_step,
    apply_schedule,
    update_q,
)
from .pgm import write_pgm

OUTPUT_ROOT_ENV = "SEMICOUPLED_OUTPUT_ROOT"

TASK_NAMES = ("geometry_shape", "geometry_direction", "star_rhombus", "blob_forecast")

CHECKPOINT_NAME = "checkpoint.bin"
METRICS_NAME = "metrics.csv"

_BASE_COLUMNS = (
    "step",
    "loss_main",
    "loss_spatial",
    "loss_temporal",
    "loss_overlap",
    "p_spatial",
    "p_temporal",
    "q",
)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ModelConfig:
    depth: int = 2
    channels: int = 8
    kernel: int = 3
    stem: str | None = None
    residual: bool = False
    reduction: str = "time_average"

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"model.depth must be >= 1, got {self.depth}")
        if self.channels < 1:
            raise ConfigError(f"model.channels must be >= 1, got {self.channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"model.kernel must be odd and >= 1, got {self.kernel}")
        if self.stem not in (None, "conv", "pool", "conv_pool"):
            raise ConfigError(
                f"model.stem must be null, 'conv', 'pool' or 'conv_pool', got {self.stem!r}"
            )
        if self.reduction not in ("time_average", "final_step"):
            raise ConfigError(
                f"model.reduction must be 'time_average' or 'final_step', got {self.reduction!r}"
            )


@dataclass
class DataConfig:
    t_steps: int = 16
    frame_size: int = 32
    train_size: int = 256
    test_size: int = 200
    holdout_shape: str | None = None
    disordered: bool = False
    speeds: tuple[int, ...] = (1,)
    sizes: tuple[int, ...] = (4, 5, 6, 7)
    t_in: int = 5
    t_out: int = 5
    star_max_back: int = 50
    star_size: int = 6
    star_jitter: int = 3
    prepool: int = 1

    def __post_init__(self):
        self.speeds = tuple(self.speeds)
        self.sizes = tuple(self.sizes)
        for name in ("t_steps", "frame_size", "train_size", "test_size", "t_in", "t_out"):
            if getattr(self, name) < 1:
                raise ConfigError(f"data.{name} must be >= 1, got {getattr(self, name)}")
        if self.holdout_shape is not None and self.holdout_shape not in tasks.SHAPES:
            raise ConfigError(
                f"data.holdout_shape must be one of {tasks.SHAPES}, got {self.holdout_shape!r}"
            )
        if not self.speeds or not self.sizes:
            raise ConfigError("data.speeds and data.sizes must be non-empty")
        if self.prepool < 1 or self.frame_size % self.prepool:
            raise ConfigError(
                f"data.prepool must divide frame_size, got {self.prepool} for {self.frame_size}"
            )
        if self.star_max_back < 0:
            raise ConfigError(f"data.star_max_back must be >= 0, got {self.star_max_back}")


@dataclass
class LtscConfig:
    enabled: bool = False
    chunk_len: int = 8
    eta: float = 0.25
    overlap_weight: float = 0.3

    def __post_init__(self):
        if self.chunk_len < 2:
            raise ConfigError(f"ltsc.chunk_len must be >= 2, got {self.chunk_len}")
        if not (0.0 < self.eta < 1.0):
            raise ConfigError(f"ltsc.eta must lie in (0, 1), got {self.eta}")
        if self.overlap_weight < 0:
            raise ConfigError(f"ltsc.overlap_weight must be >= 0, got {self.overlap_weight}")


@dataclass
class ScheduleConfig:
    mode: str = "astsgd"
    q0: float = 0.5
    thresh: float = 0.1
    alpha: float = 1.0
    p_spatial: float = 0.5
    p_temporal: float = 0.5
    decay_steps: int = 1000
    init_main_loss: float | None = None

    def __post_init__(self):
        if self.mode not in ("stsgd", "astsgd", "off"):
            raise ConfigError(f"schedule.mode must be stsgd, astsgd or off, got {self.mode!r}")


@dataclass
class OptimizerConfig:
    lr: float = 3e-3
    batch_size: int = 8
    flush_every: int = 1
    clip: tuple[float, float] = (-5.0, 5.0)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"optimizer.lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"optimizer.batch_size must be >= 1, got {self.batch_size}")
        if self.flush_every < 1:
            raise ConfigError(f"optimizer.flush_every must be >= 1, got {self.flush_every}")
        try:
            lo, hi = self.clip
        except (TypeError, ValueError):
            raise ConfigError(f"optimizer.clip must be a [lo, hi] pair, got {self.clip!r}") from None
        if not lo < hi:
            raise ConfigError(f"optimizer.clip needs lo < hi, got {self.clip!r}")
        self.clip = (float(lo), float(hi))


@dataclass
class SubgoalWeights:
    spatial: float = 1.0
    temporal: float = 1.0

    def __post_init__(self):
        if self.spatial < 0 or self.temporal < 0:
            raise ConfigError("subgoal weights must be >= 0")


@dataclass
class AblationConfig:
    no_subgoals: bool = False
    no_astsgd: bool = False
    no_ltsc: bool = False
    # Drop only the temporal sub-goal; accepted under the alias "no_t2_only".
    no_temporal_subgoal: bool = False


_SECTION_CLASSES = {
    "model": ModelConfig,
    "data": DataConfig,
    "ltsc": LtscConfig,
    "schedule": ScheduleConfig,
    "optimizer": OptimizerConfig,
    "subgoals": SubgoalWeights,
    "ablation": AblationConfig,
}

_TOP_LEVEL_KEYS = ("task", "seed", "steps", "eval_every", "output_dir") + tuple(_SECTION_CLASSES)


@dataclass
class ExperimentConfig:
    task: str
    seed: int
    steps: int
    eval_every: int
    output_dir: str
    model: ModelConfig
    data: DataConfig
    ltsc: LtscConfig
    schedule: ScheduleConfig
    optimizer: OptimizerConfig
    subgoals: SubgoalWeights
    ablation: AblationConfig

    def __post_init__(self):
        if self.task not in TASK_NAMES:
            raise ConfigError(f"task must be one of {TASK_NAMES}, got {self.task!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")

    def to_dict(self) -> dict:
        raw = dataclasses.asdict(self)
        raw["optimizer"]["clip"] = list(self.optimizer.clip)
        raw["data"]["speeds"] = list(self.data.speeds)
        raw["data"]["sizes"] = list(self.data.sizes)
        return raw


def default_config(task: str) -> dict:
    """Tuned full config dict for a task; user configs override fields of it."""
    if task not in TASK_NAMES:
        raise ConfigError(f"task must be one of {TASK_NAMES}, got {task!r}")
    base = {
        "task": task,
        "seed": 0,
        "output_dir": f"runs/{task}",
        "schedule": {"mode": "astsgd", "q0": 0.5, "thresh": 0.1, "alpha": 1.0},
        "subgoals": {"spatial": 1.0, "temporal": 0.5},
        "ablation": {},
    }
    if task in ("geometry_shape", "geometry_direction"):
        # Direction trains on pre-pooled frames: the motion-vector sub-goal
        # needs no fine spatial detail and the smaller maps cut step cost.
        direction = task == "geometry_direction"
        base.update(
            steps=500,
            eval_every=50,
            model={
                "depth": 4,
                "channels": 8,
                "kernel": 3,
                "stem": "conv_pool",
                "residual": True,
                "reduction": "time_average",
            },
            data={
                "t_steps": 16,
                "frame_size": 32,
                "train_size": 256,
                "test_size": 200,
                "prepool": 2 if direction else 1,
            },
            ltsc={"enabled": False},
            optimizer={"lr": 3e-3, "batch_size": 8, "flush_every": 1},
        )
        base["schedule"]["thresh"] = 0.55
        base["subgoals"] = {"spatial": 1.0, "temporal": 1.0}
    elif task == "star_rhombus":
        base.update(
            steps=600,
            eval_every=150,
            model={"depth": 2, "channels": 8, "kernel": 3, "stem": None, "residual": False},
            data={
                "t_steps": 60,
                "frame_size": 32,
                "train_size": 512,
                "test_size": 200,
                "prepool": 2,
            },
            ltsc={"enabled": True, "chunk_len": 8, "eta": 0.25, "overlap_weight": 0.3},
            optimizer={"lr": 3e-3, "batch_size": 8, "flush_every": 1},
        )
        base["schedule"]["thresh"] = 0.05
    else:
        base.update(
            steps=400,
            eval_every=100,
            model={"depth": 2, "channels": 8, "kernel": 3, "stem": None, "residual": False},
            data={"t_in": 5, "t_out": 5, "frame_size": 32, "train_size": 256, "test_size": 64},
            ltsc={"enabled": False},
            optimizer={"lr": 3e-3, "batch_size": 4, "flush_every": 1},
        )
        base["schedule"]["thresh"] = 0.02
        base["subgoals"] = {"spatial": 1.0, "temporal": 1.0}
    return base


_FIELD_ALIASES = {"ablation": {"no_t2_only": "no_temporal_subgoal"}}


def _build_section(cls, name: str, raw) -> object:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config section '{name}' must be a JSON object, got {type(raw).__name__}")
    aliases = _FIELD_ALIASES.get(name, {})
    raw = {aliases.get(key, key): value for key, value in raw.items()}
    valid = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in valid:
            raise ConfigError(f"unknown key '{key}' in config section '{name}'")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad value in config section '{name}': {exc}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a config dict, filling unspecified fields from task defaults."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config must be a JSON object, got {type(raw).__name__}")
    for key in raw:
        if key not in _TOP_LEVEL_KEYS:
            raise ConfigError(f"unknown top-level config key '{key}'")
    if "task" not in raw:
        raise ConfigError("config is missing required key 'task'")
    if "seed" not in raw:
        raise ConfigError("config is missing required key 'seed'")

    merged = default_config(raw["task"])
    for key, value in raw.items():
        if key in _SECTION_CLASSES:
            if value is None:
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"config section '{key}' must be a JSON object")
            section = dict(merged.get(key, {}))
            section.update(value)
            merged[key] = section
        else:
            merged[key] = value

    sections = {
        name: _build_section(cls, name, merged.get(name)) for name, cls in _SECTION_CLASSES.items()
    }
    return ExperimentConfig(
        task=merged["task"],
        seed=merged["seed"],
        steps=merged["steps"],
        eval_every=merged["eval_every"],
        output_dir=merged["output_dir"],
        **sections,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return config_from_dict(raw)


def resolve_output_dir(output_dir) -> Path:
    """Apply the output-root override for relative paths."""
    path = Path(output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


# ---------------------------------------------------------------------------
# shared runner pieces
# ---------------------------------------------------------------------------

def _seed_ints(seed: int, n: int) -> list[int]:
    return [int(x) for x in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)]


def _block_mean(arr: np.ndarray, k: int) -> np.ndarray:
    """Average-pool [..., H, W] by a factor k in both spatial axes."""
    if k == 1:
        return arr
    *lead, h, w = arr.shape
    if h % k or w % k:
        raise ContractError(f"cannot pool {h}x{w} by factor {k}")
    return arr.reshape(*lead, h // k, k, w // k, k).mean(axis=(-3, -1))


@dataclass
class LossBundle:
    """One training (or probing) batch worth of losses."""

    total: Tensor
    main: float
    spatial: float | None = None
    temporal: float | None = None
    overlap: float | None = None


@dataclass
class EffectiveSettings:
    """Config after ablation flags are folded in."""

    schedule_mode: str
    use_ltsc: bool
    spatial_weight: float
    temporal_weight: float
    overlap_weight: float
    compute_spatial: bool
    compute_temporal: bool


def resolve_settings(config: ExperimentConfig) -> EffectiveSettings:
    ab = config.ablation
    mode = "off" if ab.no_astsgd else config.schedule.mode
    use_ltsc = config.ltsc.enabled and not ab.no_ltsc
    w_s = 0.0 if ab.no_subgoals else config.subgoals.spatial
    w_t = 0.0 if (ab.no_subgoals or ab.no_temporal_subgoal) else config.subgoals.temporal
    # The adaptive schedule needs the spatial loss value even when its
    # gradient is ablated away, so the spatial pass stays on under astsgd.
    compute_spatial = w_s > 0 or mode == "astsgd"
    return EffectiveSettings(
        schedule_mode=mode,
        use_ltsc=use_ltsc,
        spatial_weight=w_s,
        temporal_weight=w_t,
        overlap_weight=config.ltsc.overlap_weight if use_ltsc else 0.0,
        compute_spatial=compute_spatial,
        compute_temporal=w_t > 0,
    )


def _segments(part: ltsc_mod.Partition | None, total: int) -> list[tuple[int, int]]:
    if part is None:
        return [(0, total)]
    return list(part.chunks)


def _weighted_total(parts: list[tuple[Tensor, float]]) -> Tensor:
    total = None
    for tensor, weight in parts:
        if tensor is None or weight == 0.0:
            continue
        term = ops.scale(tensor, weight) if weight != 1.0 else tensor
        total = term if total is None else ops.add(total, term)
    if total is None:
        raise ContractError("loss has no active terms")
    return total


def _unit_image(img: np.ndarray) -> np.ndarray:
    try:
        return metrics_mod.normalize_intensity(img)
    except Exception:
        return np.zeros_like(img)


class _RunnerBase:
    """Task-independent glue shared by the concrete runners."""

    net: SemiCoupledNet
    gate_pairs: list[GatePair]

    def init_common(self, config: ExperimentConfig):
        self.config = config
        self.settings = resolve_settings(config)
        seeds = _seed_ints(config.seed, 6)
        self.seed_model, self.seed_gates, self.seed_train, self.seed_test, seed_batch, seed_init = seeds
        self.rng_batch = np.random.default_rng(seed_batch)
        self.rng_init = np.random.default_rng(seed_init)

    # -- parameters -----------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return self.net.parameters()

    def clip_names(self) -> frozenset[str]:
        return frozenset(n for n in self.parameters() if ".temporal_" in n)

    def gate_descriptors(self):
        out = []
        for pair in self.gate_pairs:
            out.extend([pair.spatial, pair.temporal])
        return out

    def stats_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, net in self.named_nets():
            if net.stem is not None and net.stem.kind in ("conv", "conv_pool"):
                out[f"{prefix}stem.running_mean"] = net.stem.stats.mean
                out[f"{prefix}stem.running_var"] = net.stem.stats.var
        return out

    def load_stats_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for prefix, net in self.named_nets():
            if net.stem is not None and net.stem.kind in ("conv", "conv_pool"):
                net.stem.stats.mean = arrays[f"{prefix}stem.running_mean"].copy()
                net.stem.stats.var = arrays[f"{prefix}stem.running_var"].copy()

    def named_nets(self) -> list[tuple[str, SemiCoupledNet]]:
        return [("", self.net)]

    # -- to be provided by subclasses ------------------------------------

    def batch_losses(self, rng, training: bool = True, gated: bool = True) -> LossBundle:
        raise NotImplementedError

    def evaluate(self) -> dict[str, float]:
        raise NotImplementedError

    def eval_columns(self) -> list[str]:
        raise NotImplementedError

    def write_featuremaps(self, out_dir: Path) -> None:
        raise NotImplementedError

    # -- featuremap helper -----------------------------------------------

    def _dump_internals(self, out_dir: Path, frames: list[Tensor]) -> None:
        """Write top-layer activation maps of all three evaluation modes.

        The spatial maps come from the spatial-only re-evaluation, so they
        are bitwise invariant to any temporal-bank perturbation; likewise
        the temporal maps never involve the spatial banks.
        """
        out_dir.mkdir(parents=True, exist_ok=True)
        with no_grad():
            passes = {
                "combined": run_sequence(frames, self.net, "main", training=False,
                                         update_stats=False).features,
                "spatial": run_sequence(frames, self.net, "spatial_only", training=False,
                                        update_stats=False).features,
                "temporal": run_sequence(frames, self.net, "temporal_only", training=False,
                                         update_stats=False).features,
            }
        steps = sorted({0, len(frames) // 2, len(frames) - 1})
        for tag, features in passes.items():
            for t in steps:
                img = _unit_image(features[t].data[0].mean(axis=0))
                write_pgm(out_dir / f"{tag}_t{t:02d}.pgm", img)


# ---------------------------------------------------------------------------
# moving geometry (shape / direction classification)
# ---------------------------------------------------------------------------

class GeometryRunner(_RunnerBase):
    """Sequence classification of a moving shape's identity or heading."""

    def __init__(self, config: ExperimentConfig):
        self.init_common(config)
        data = config.data
        self.label_key = "shape" if config.task == "geometry_shape" else "direction"
        if config.task == "geometry_shape" and data.holdout_shape is not None:
            raise ConfigError("data.holdout_shape only applies to geometry_direction")
        if self.label_key == "direction" and data.disordered:
            raise ConfigError("disordered motion leaves the direction label undefined")

        self.train_shapes = [s for s in tasks.SHAPES if s != data.holdout_shape]
        self.n_classes = len(tasks.SHAPES) if self.label_key == "shape" else len(tasks.DIRECTIONS)
        self.side = data.frame_size // data.prepool

        self.frames_train, self.labels_train, self.shapes_train, self.vel_train = self._generate(
            self.seed_train, data.train_size, self.train_shapes
        )
        self.frames_test, self.labels_test, self.shapes_test, _ = self._generate(
            self.seed_test, data.test_size, self.train_shapes
        )
        if data.holdout_shape is not None:
            self.frames_holdout, self.labels_holdout, _, _ = self._generate(
                self.seed_test + 1, data.test_size, [data.holdout_shape]
            )
        else:
            self.frames_holdout = None

        model = config.model
        widths = [model.channels] * model.depth
        # The direction task regresses the global motion vector through a
        # pooled head, so the cells learn a direction code that survives
        # global average pooling; the shape task keeps the dense
        # frame-difference field as its temporal indicating goal.
        temporal_spec = (
            ("pooled_linear", 2) if self.label_key == "direction" else ("conv1x1", 1)
        )
        self.net = build_net(
            self.seed_model,
            channels_in=1,
            widths=widths,
            head_specs={
                "main": ("pooled_linear", self.n_classes),
                "spatial": ("pooled_linear", len(tasks.SHAPES)),
                "temporal": temporal_spec,
            },
            kernel_size=model.kernel,
            stem=model.stem,
            residual=model.residual,
        )
        self.gate_pairs = build_gates(len(self.net.layers), self.seed_gates)

        h = self.side
        fh, _ = self.net.feature_hw(h, h)
        if h % fh:
            raise ConfigError(f"stem reduces {h} to {fh}, which is not an integer factor")
        self.pool_factor = h // fh

        self.partition = None
        if self.settings.use_ltsc:
            self.partition = ltsc_mod.partition(data.t_steps, config.ltsc.chunk_len, config.ltsc.eta)

    def _generate(self, seed: int, count: int, shapes: list[str]):
        data = self.config.data
        rng = np.random.default_rng(seed)
        frames = np.empty((count, data.t_steps, 1, self.side, self.side))
        labels = np.empty(count, dtype=np.int64)
        shape_ids = np.empty(count, dtype=np.int64)
        velocities = np.empty((count, 2))
        for i in range(count):
            spec = tasks.GeometrySpec(
                shape=shapes[int(rng.integers(len(shapes)))],
                direction=int(rng.integers(len(tasks.DIRECTIONS))),
                speed=int(rng.choice(np.asarray(data.speeds))),
                size=int(rng.choice(np.asarray(data.sizes))),
            )
            seq = tasks.gen_moving_geometry(
                spec,
                t_steps=data.t_steps,
                h=data.frame_size,
                w=data.frame_size,
                seed=int(rng.integers(2**32)),
                disordered=data.disordered,
            )
            frames[i] = _block_mean(np.stack(seq.frames), data.prepool)
            labels[i] = seq.labels[self.label_key]
            shape_ids[i] = seq.labels["shape"]
            velocities[i] = np.asarray(tasks.DIRECTIONS[spec.direction]) * spec.speed
        return frames, labels, shape_ids, velocities

    def eval_columns(self) -> list[str]:
        cols = ["eval_accuracy"]
        if self.frames_holdout is not None:
            cols.append("eval_holdout_accuracy")
        return cols

    def _main_logits(self, frames_by_step, training, gates, first_update):
        segs = _segments(self.partition, len(frames_by_step))
        all_feats = []
        chunk_feats = []
        head = self.net.heads["main"]
        for ci, (s0, e0) in enumerate(segs):
            result = run_sequence(
                frames_by_step[s0:e0],
                self.net,
                "main",
                gates=gates,
                training=training,
                update_stats=(first_update and ci == 0),
            )
            chunk_feats.append(result.features)
            all_feats.extend(result.features)
        return sequence_logits(all_feats, head, self.config.model.reduction), chunk_feats

    def batch_losses(self, rng, training: bool = True, gated: bool = True) -> LossBundle:
        data = self.config.data
        idx = rng.integers(0, data.train_size, size=self.config.optimizer.batch_size)
        frames = self.frames_train[idx]
        labels = self.labels_train[idx]
        shape_ids = self.shapes_train[idx]
        gates = self.gate_pairs if (training and gated) else None
        st = self.settings

        frames_by_step = [Tensor(frames[:, t]) for t in range(data.t_steps)]
        logits, chunk_feats = self._main_logits(frames_by_step, training, gates, first_update=training)
        loss_main = ops.softmax_cross_entropy(logits, labels)

        loss_spatial = None
        if st.compute_spatial:
            # The spatial pass has no recurrence, so one full-sequence pass
            # is equivalent to chunked passes up to overlap double counting.
            # Auxiliary passes run ungated: the switch only arbitrates the
            # main objective, each sub-goal teaches its branch directly.
            s_result = run_sequence(frames_by_step, self.net, "spatial_only",
                                    gates=None, training=training, update_stats=False)
            s_logits = ops.time_average(
                [head_apply(self.net.heads["spatial"], f) for f in s_result.features]
            )
            loss_spatial = ops.softmax_cross_entropy(s_logits, shape_ids)

        loss_temporal = None
        if st.compute_temporal:
            head = self.net.heads["temporal"]
            vel_target = ops.as_tensor(self.vel_train[idx]) if self.label_key == "direction" else None
            pooled = None if vel_target is not None else _block_mean(frames, self.pool_factor)
            terms = []
            for s0, e0 in _segments(self.partition, data.t_steps):
                t_result = run_sequence(frames_by_step[s0:e0], self.net, "temporal_only",
                                        gates=None, training=training, update_stats=False)
                if vel_target is not None:
                    # The direction task regresses the sequence's global
                    # motion vector at every step.  The very first step has
                    # seen a single frame and no motion yet, so it carries
                    # no target.
                    lo = 1 if s0 == 0 else 0
                    terms.extend(
                        ops.mse(head_apply(head, f), vel_target)
                        for f in t_result.features[lo:]
                    )
                    continue
                # Predictive pairing: the feature at step t regresses the
                # t -> t+1 difference, so the cells must estimate velocity,
                # not merely reconstruct the change they already saw.  The
                # final step of the last chunk has no forward target and is
                # dropped by the zip.  The x4 gain keeps the all-zero
                # prediction from being a cheap local minimum on these
                # sparse targets.
                hi = min(e0 + 1, data.t_steps)
                diffs = tasks.frame_difference_targets([pooled[:, t] for t in range(s0, hi)])[1:]
                terms.extend(
                    ops.mse(head_apply(head, f), ops.as_tensor(target * 4.0))
                    for f, target in zip(t_result.features, diffs)
                )
            loss_temporal = ops.time_average(terms)

        loss_overlap = None
        if self.partition is not None and len(chunk_feats) > 1:
            loss_overlap = ltsc_mod.overlap_loss(chunk_feats, self.partition)

        total = _weighted_total([
            (loss_main, 1.0),
            (loss_spatial, st.spatial_weight),
            (loss_temporal, st.temporal_weight),
            (loss_overlap, st.overlap_weight),
        ])
        return LossBundle(
            total=total,
            main=float(loss_main.data),
            spatial=None if loss_spatial is None else float(loss_spatial.data),
            temporal=None if loss_temporal is None else float(loss_temporal.data),
            overlap=None if loss_overlap is None else float(loss_overlap.data),
        )

    def _accuracy(self, frames_all: np.ndarray, labels_all: np.ndarray) -> float:
        data = self.config.data
        correct = 0
        with no_grad():
            for lo in range(0, len(labels_all), 50):
                frames = frames_all[lo : lo + 50]
                frames_by_step = [Tensor(frames[:, t]) for t in range(data.t_steps)]
                logits, _ = self._main_logits(frames_by_step, False, None, False)
                correct += int((logits.data.argmax(axis=1) == labels_all[lo : lo + 50]).sum())
        return correct / len(labels_all)

    def evaluate(self) -> dict[str, float]:
        out = {"eval_accuracy": self._accuracy(self.frames_test, self.labels_test)}
        if self.frames_holdout is not None:
            out["eval_holdout_accuracy"] = self._accuracy(self.frames_holdout, self.labels_holdout)
        return out

    def write_featuremaps(self, out_dir: Path) -> None:
        span = self.partition.chunks[0] if self.partition else (0, self.config.data.t_steps)
        frames = [Tensor(self.frames_test[:1, t]) for t in range(span[0], span[1])]
        self._dump_internals(out_dir, frames)


# ---------------------------------------------------------------------------
# star distance counting over long sequences
# ---------------------------------------------------------------------------

class StarRunner(_RunnerBase):
    """Frames-since-star regression with chunked processing.

    The network never sees more than one chunk at a time; what carries the
    count across chunk boundaries is an extra input channel holding the
    previous frame's (encoded) distance estimate.  Training teacher-forces
    that channel from the labels; evaluation relays the model's own rounded
    estimate, so integer snapping stops errors from accumulating.
    """

    def __init__(self, config: ExperimentConfig):
        self.init_common(config)
        data = config.data
        self.t_steps = data.t_steps
        self.side = data.frame_size // data.prepool

        self.pooled_train, self.labels_train = self._generate(self.seed_train, data.train_size, full_range=True)
        self.pooled_test, self.labels_test = self._generate(self.seed_test, data.test_size, full_range=False)

        model = config.model
        self.net = build_net(
            self.seed_model,
            channels_in=2,
            widths=[model.channels] * model.depth,
            head_specs={
                "main": ("pooled_linear", 1),
                "seen": ("pooled_linear", 2),
                "spatial": ("pooled_linear", 2),
                "temporal": ("conv1x1", 1),
            },
            kernel_size=model.kernel,
            stem=model.stem,
            residual=model.residual,
        )
        self.gate_pairs = build_gates(len(self.net.layers), self.seed_gates)

        if self.settings.use_ltsc:
            self.partition = ltsc_mod.partition(self.t_steps, config.ltsc.chunk_len, config.ltsc.eta)
        else:
            self.partition = ltsc_mod.Partition(
                chunks=((0, self.t_steps),), overlap_len=1,
                source_len=self.t_steps, chunk_len=self.t_steps,
            )

    def _generate(self, seed: int, count: int, full_range: bool):
        data = self.config.data
        rng = np.random.default_rng(seed)
        t = self.t_steps
        lo = 0 if full_range else max(0, t - 1 - data.star_max_back)
        pooled = np.empty((count, t, 1, self.side, self.side))
        labels = np.empty((count, t), dtype=np.int64)
        for i in range(count):
            seq = tasks.gen_star_rhombus(
                t_steps=t,
                star_index=int(rng.integers(lo, t)),
                h=data.frame_size,
                w=data.frame_size,
                seed=int(rng.integers(2**32)),
                size=data.star_size,
                jitter=data.star_jitter,
            )
            pooled[i] = _block_mean(np.stack(seq.frames), data.prepool)
            labels[i] = seq.labels["distance"]
        return pooled, labels

    def eval_columns(self) -> list[str]:
        return ["eval_exact_match", "eval_step_accuracy"]

    def _encode(self, prev_labels: np.ndarray) -> np.ndarray:
        """Constant map carrying the previous distance; sentinel encodes 0."""
        vals = np.where(prev_labels >= 0, (prev_labels + 1) / self.t_steps, 0.0)
        n = len(prev_labels)
        return np.broadcast_to(vals[:, None, None, None], (n, 1, self.side, self.side)).copy()

    def _chunk_inputs(self, pooled: np.ndarray, labels: np.ndarray, span: tuple[int, int]) -> list[Tensor]:
        s0, e0 = span
        frames = []
        for t in range(s0, e0):
            prev = labels[:, t - 1] if t > 0 else np.full(len(labels), -1, dtype=np.int64)
            frames.append(Tensor(np.concatenate([pooled[:, t], self._encode(prev)], axis=1)))
        return frames

    def batch_losses(self, rng, training: bool = True, gated: bool = True) -> LossBundle:
        data = self.config.data
        opt = self.config.optimizer
        idx = rng.integers(0, data.train_size, size=opt.batch_size)
        chunks = self.partition.chunks
        if len(chunks) > 1:
            pair = int(rng.integers(1, len(chunks)))
            segs = [chunks[pair - 1], chunks[pair]]
        else:
            segs = [chunks[0]]

        pooled = self.pooled_train[idx]
        labels = self.labels_train[idx]
        gates = self.gate_pairs if (training and gated) else None
        st = self.settings
        t_total = float(self.t_steps)

        sq_terms, seen_terms, spatial_terms, temporal_terms = [], [], [], []
        mask_count = 0
        chunk_feats = []
        for ci, (s0, e0) in enumerate(segs):
            frames = self._chunk_inputs(pooled, labels, (s0, e0))
            result = run_sequence(frames, self.net, "main", gates=gates,
                                  training=training, update_stats=(training and ci == 0))
            chunk_feats.append(result.features)
            for k, feat in enumerate(result.features):
                t = s0 + k
                lab = labels[:, t]
                dist = head_apply(self.net.heads["main"], feat)
                mask = (lab >= 0).astype(np.float64)[:, None]
                target = np.where(lab >= 0, lab / t_total, 0.0)[:, None]
                masked = ops.mul(ops.sub(dist, ops.as_tensor(target)), ops.as_tensor(mask))
                sq_terms.append(ops.sum_all(ops.mul(masked, masked)))
                mask_count += int(mask.sum())
                seen = head_apply(self.net.heads["seen"], feat)
                seen_terms.append(ops.softmax_cross_entropy(seen, (lab >= 0).astype(np.int64)))

            if st.compute_spatial:
                s_result = run_sequence(frames, self.net, "spatial_only", gates=None,
                                        training=training, update_stats=False)
                for k, feat in enumerate(s_result.features):
                    present = (labels[:, s0 + k] == 0).astype(np.int64)
                    logits = head_apply(self.net.heads["spatial"], feat)
                    spatial_terms.append(ops.softmax_cross_entropy(logits, present))

            if st.compute_temporal:
                t_result = run_sequence(frames, self.net, "temporal_only", gates=None,
                                        training=training, update_stats=False)
                # predictive pairing: feature at t regresses the t -> t+1 change
                hi = min(e0 + 1, self.t_steps)
                diffs = tasks.frame_difference_targets([pooled[:, t] for t in range(s0, hi)])[1:]
                temporal_terms.extend(
                    ops.mse(head_apply(self.net.heads["temporal"], f), ops.as_tensor(tgt))
                    for f, tgt in zip(t_result.features, diffs)
                )

        loss_main = ops.time_average(seen_terms)
        if mask_count:
            loss_main = ops.add(loss_main, ops.scale(ops.add_n(sq_terms), 1.0 / mask_count))
        loss_spatial = ops.time_average(spatial_terms) if spatial_terms else None
        loss_temporal = ops.time_average(temporal_terms) if temporal_terms else None
        loss_overlap = None
        if len(segs) == 2:
            pair_part = ltsc_mod.Partition(
                chunks=(segs[0], segs[1]),
                overlap_len=self.partition.overlap_len,
                source_len=self.t_steps,
                chunk_len=self.partition.chunk_len,
            )
            loss_overlap = ltsc_mod.overlap_loss(chunk_feats, pair_part)

        total = _weighted_total([
            (loss_main, 1.0),
            (loss_spatial, st.spatial_weight),
            (loss_temporal, st.temporal_weight),
            (loss_overlap, st.overlap_weight),
        ])
        return LossBundle(
            total=total,
            main=float(loss_main.data),
            spatial=None if loss_spatial is None else float(loss_spatial.data),
            temporal=None if loss_temporal is None else float(loss_temporal.data),
            overlap=None if loss_overlap is None else float(loss_overlap.data),
        )

    def predict_labels(self, pooled: np.ndarray) -> np.ndarray:
        """Relay the model's own snapped estimates across the chunk cover.

        Chunks run in start order; each step's extra channel encodes the
        stitched (mean over covering chunks so far) estimate for the previous
        frame, rounded to an integer distance before re-encoding.
        """
        n, t = pooled.shape[0], self.t_steps
        dist_sum = np.zeros((n, t))
        seen_sum = np.zeros((n, t, 2))
        count = np.zeros(t, dtype=np.int64)

        def decided(ti: int) -> np.ndarray:
            if ti < 0 or count[ti] == 0:
                return np.full(n, -1, dtype=np.int64)
            seen = seen_sum[:, ti, :].argmax(axis=1) == 1
            est = np.clip(np.rint(dist_sum[:, ti] / count[ti] * t), 0, t - 1).astype(np.int64)
            return np.where(seen, est, -1)

        with no_grad():
            for s0, e0 in self.partition.chunks:
                state = zero_state(self.net, n, self.side, self.side)
                for ti in range(s0, e0):
                    x = Tensor(np.concatenate([pooled[:, ti], self._encode(decided(ti - 1))], axis=1))
                    result = run_sequence([x], self.net, "main", init_state=state, training=False)
                    state = result.state
                    feat = result.features[0]
                    dist_sum[:, ti] += head_apply(self.net.heads["main"], feat).data[:, 0]
                    seen_sum[:, ti] += head_apply(self.net.heads["seen"], feat).data
                    count[ti] += 1

        return np.stack([decided(ti) for ti in range(t)], axis=1)

    def evaluate(self) -> dict[str, float]:
        predicted = self.predict_labels(self.pooled_test)
        exact = float((predicted[:, -1] == self.labels_test[:, -1]).mean())
        step_acc = float((predicted == self.labels_test).mean())
        return {"eval_exact_match": exact, "eval_step_accuracy": step_acc}

    def write_featuremaps(self, out_dir: Path) -> None:
        span = self.partition.chunks[0]
        frames = self._chunk_inputs(self.pooled_test[:1], self.labels_test[:1], span)
        self._dump_internals(out_dir, frames)


# ---------------------------------------------------------------------------
# diffusing blob forecasting (encoder / decoder)
# ---------------------------------------------------------------------------

class BlobRunner(_RunnerBase):
    """Seq2seq intensity forecasting with an autoregressive decoder."""

    def __init__(self, config: ExperimentConfig):
        self.init_common(config)
        data = config.data
        self.inputs_train, self.targets_train = self._generate(self.seed_train, data.train_size)
        self.inputs_test, self.targets_test = self._generate(self.seed_test, data.test_size)

        model = config.model
        widths = [model.channels] * model.depth
        seeds = _seed_ints(self.seed_model, 2)
        self.encoder = build_net(
            seeds[0], channels_in=1, widths=widths,
            head_specs={"temporal": ("conv1x1", 1)},
            kernel_size=model.kernel, stem=model.stem, residual=model.residual,
        )
        self.decoder = build_net(
            seeds[1], channels_in=1, widths=widths,
            head_specs={"main": ("conv1x1", 1, "sigmoid"), "spatial": ("conv1x1", 1, "sigmoid")},
            kernel_size=model.kernel, stem=model.stem, residual=model.residual,
        )
        self.net = self.encoder
        gate_seeds = _seed_ints(self.seed_gates, 2)
        self.enc_gates = build_gates(len(self.encoder.layers), gate_seeds[0])
        self.dec_gates = build_gates(len(self.decoder.layers), gate_seeds[1])
        self.gate_pairs = self.enc_gates + self.dec_gates

    def _generate(self, seed: int, count: int):
        data = self.config.data
        rng = np.random.default_rng(seed)
        side = data.frame_size
        inputs = np.empty((count, data.t_in, 1, side, side))
        targets = np.empty((count, data.t_out, 1, side, side))
        for i in range(count):
            seq_in, seq_out = tasks.gen_diffusing_blob(
                t_in=data.t_in, t_out=data.t_out, h=side, w=side,
                seed=int(rng.integers(2**32)),
            )
            inputs[i] = np.stack(seq_in.frames)
            targets[i] = np.stack(seq_out.frames)
        return inputs, targets

    def named_nets(self):
        return [("enc.", self.encoder), ("dec.", self.decoder)]

    def parameters(self) -> dict[str, Tensor]:
        named = {}
        for prefix, net in self.named_nets():
            for name, tensor in net.parameters().items():
                named[prefix + name] = tensor
        return named

    def eval_columns(self) -> list[str]:
        return ["eval_csi", "eval_far", "eval_pod", "eval_correlation"]

    def _forecast(self, inputs: np.ndarray, training: bool, gated: bool) -> list[Tensor]:
        data = self.config.data
        frames = [Tensor(inputs[:, t]) for t in range(data.t_in)]
        enc_gates = self.enc_gates if (training and gated) else None
        dec_gates = self.dec_gates if (training and gated) else None
        enc = run_sequence(frames, self.encoder, "main", gates=enc_gates, training=training)
        handoff = NetState(cells=list(enc.state.cells), time_index=0)
        return decode_autoregressive(
            self.decoder, frames[-1], data.t_out, handoff,
            gates=dec_gates, training=training,
        )

    def batch_losses(self, rng, training: bool = True, gated: bool = True) -> LossBundle:
        data = self.config.data
        idx = rng.integers(0, data.train_size, size=self.config.optimizer.batch_size)
        inputs = self.inputs_train[idx]
        targets = self.targets_train[idx]
        st = self.settings

        preds = self._forecast(inputs, training, gated)
        loss_main = ops.time_average(
            [ops.mse(p, ops.as_tensor(targets[:, t])) for t, p in enumerate(preds)]
        )

        loss_spatial = None
        if st.compute_spatial:
            n, side = inputs.shape[0], data.frame_size
            rollout = decode_autoregressive(
                self.decoder, Tensor(inputs[:, -1]), data.t_out,
                zero_state(self.decoder, n, side, side),
                gates=None, training=training,
                synth="spatial_only", head_name="spatial",
            )
            loss_spatial = ops.time_average(
                [ops.mse(p, ops.as_tensor(targets[:, t])) for t, p in enumerate(rollout)]
            )

        loss_temporal = None
        if st.compute_temporal:
            frames = [Tensor(inputs[:, t]) for t in range(data.t_in)]
            t_result = run_sequence(frames, self.encoder, "temporal_only",
                                    gates=None, training=training, update_stats=False)
            # predictive pairing across the input span and the seam into the
            # first target frame, so the encoder cells carry velocity forward
            span = [inputs[:, t] for t in range(data.t_in)] + [targets[:, 0]]
            diffs = tasks.frame_difference_targets(span)[1:]
            head = self.encoder.heads["temporal"]
            loss_temporal = ops.time_average(
                [ops.mse(head_apply(head, f), ops.as_tensor(d))
                 for f, d in zip(t_result.features, diffs)]
            )

        total = _weighted_total([
            (loss_main, 1.0),
            (loss_spatial, st.spatial_weight),
            (loss_temporal, st.temporal_weight),
        ])
        return LossBundle(
            total=total,
            main=float(loss_main.data),
            spatial=None if loss_spatial is None else float(loss_spatial.data),
            temporal=None if loss_temporal is None else float(loss_temporal.data),
        )

    def evaluate(self) -> dict[str, float]:
        cfg = metrics_mod.MetricsConfig()
        preds_all, targets_all = [], []
        with no_grad():
            for lo in range(0, len(self.inputs_test), 32):
                inputs = self.inputs_test[lo : lo + 32]
                preds = self._forecast(inputs, training=False, gated=False)
                preds_all.append(np.stack([p.data for p in preds], axis=1))
                targets_all.append(self.targets_test[lo : lo + 32])
        pred = np.concatenate(preds_all)
        label = np.concatenate(targets_all)
        scores = metrics_mod.skill_scores(pred, label, cfg)
        corr = metrics_mod.correlation(pred, label, cfg)
        return {
            "eval_csi": scores["csi"],
            "eval_far": scores["far"],
            "eval_pod": scores["pod"],
            "eval_correlation": corr,
        }

    def write_featuremaps(self, out_dir: Path) -> None:
        frames = [Tensor(self.inputs_test[:1, t]) for t in range(self.config.data.t_in)]
        self._dump_internals(out_dir, frames)


_RUNNERS = {
    "geometry_shape": GeometryRunner,
    "geometry_direction": GeometryRunner,
    "star_rhombus": StarRunner,
    "blob_forecast": BlobRunner,
}


def build_runner(config: ExperimentConfig) -> _RunnerBase:
    return _RUNNERS[config.task](config)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def _schedule_to_meta(schedule: SwitchSchedule) -> dict:
    return dataclasses.asdict(schedule)


def _schedule_from_meta(meta: dict) -> SwitchSchedule:
    return SwitchSchedule(**meta)


def save_run_checkpoint(path, runner: _RunnerBase, adam: AdamState,
                        schedule: SwitchSchedule, step: int) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in runner.parameters().items():
        arrays[f"param.{name}"] = tensor.data
    for name, arr in adam.m.items():
        arrays[f"adam.m.{name}"] = arr
    for name, arr in adam.v.items():
        arrays[f"adam.v.{name}"] = arr
    for name, arr in runner.stats_arrays().items():
        arrays[f"stats.{name}"] = arr
    meta = {
        "task": runner.config.task,
        "step": step,
        "adam": {
            "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
            "eps": adam.eps, "step_count": adam.step_count,
        },
        "schedule": _schedule_to_meta(schedule),
        "rng_batch": runner.rng_batch.bit_generator.state,
        "gate_states": [g.get_state() for g in runner.gate_descriptors()],
    }
    save_checkpoint(path, arrays, meta)


def load_run_checkpoint(path, runner: _RunnerBase) -> tuple[AdamState, SwitchSchedule, int]:
    arrays, meta = load_checkpoint(path)
    if meta.get("task") != runner.config.task:
        raise ConfigError(
            f"checkpoint task {meta.get('task')!r} does not match config task {runner.config.task!r}"
        )
    params = runner.parameters()
    for name, tensor in params.items():
        key = f"param.{name}"
        if key not in arrays:
            raise ConfigError(f"checkpoint is missing parameter {name!r}")
        if arrays[key].shape != tensor.data.shape:
            raise ConfigError(
                f"checkpoint parameter {name!r} has shape {arrays[key].shape}, "
                f"model expects {tensor.data.shape}"
            )
        tensor.data = arrays[key].copy()
    a = meta["adam"]
    adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"],
                     step_count=a["step_count"])
    for name in params:
        if f"adam.m.{name}" in arrays:
            adam.m[name] = arrays[f"adam.m.{name}"].copy()
            adam.v[name] = arrays[f"adam.v.{name}"].copy()
    stats = {k[len("stats."):]: v for k, v in arrays.items() if k.startswith("stats.")}
    if stats:
        runner.load_stats_arrays(stats)
    schedule = _schedule_from_meta(meta["schedule"])
    runner.rng_batch.bit_generator.state = meta["rng_batch"]
    for gate, state in zip(runner.gate_descriptors(), meta["gate_states"]):
        gate.set_state(state)
    return adam, schedule, int(meta["step"])


# ---------------------------------------------------------------------------
# metrics log
# ---------------------------------------------------------------------------

def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


class MetricsLog:
    """Append-only CSV with a fixed column set and repr-exact floats."""

    def __init__(self, path: Path, columns: list[str], append: bool):
        self.path = path
        self.columns = columns
        if not append or not path.exists():
            path.write_text(",".join(columns) + "\n")

    def write(self, row: dict) -> None:
        cells = [_format_cell(row.get(col)) for col in self.columns]
        with self.path.open("a") as fh:
            fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# the run loop
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    config: ExperimentConfig
    output_dir: Path
    metrics_path: Path
    checkpoint_path: Path
    final_eval: dict[str, float]
    steps_run: int


def _build_schedule(config: ExperimentConfig, settings: EffectiveSettings) -> SwitchSchedule:
    sch = config.schedule
    return SwitchSchedule(
        mode=settings.schedule_mode,
        p_spatial=sch.p_spatial,
        p_temporal=sch.p_temporal,
        decay_steps=sch.decay_steps,
        q0=sch.q0,
        thresh=sch.thresh,
        alpha=sch.alpha,
        init_main_loss=sch.init_main_loss,
    )


def _measure_initial_loss(runner: _RunnerBase, schedule: SwitchSchedule) -> None:
    """Pin the adaptive schedule's reference loss to the untrained main loss."""
    with no_grad():
        bundle = runner.batch_losses(runner.rng_init, training=False, gated=False)
    if bundle.main <= schedule.thresh:
        raise ConfigError(
            f"initial main loss ({bundle.main}) must exceed schedule.thresh ({schedule.thresh}); "
            "lower thresh or set schedule.init_main_loss explicitly"
        )
    schedule.init_main_loss = float(bundle.main)


def run_experiment(config: ExperimentConfig, resume: bool = False) -> RunResult:
    out_dir = resolve_output_dir(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / CHECKPOINT_NAME
    metrics_path = out_dir / METRICS_NAME

    runner = build_runner(config)
    settings = runner.settings
    opt = config.optimizer
    buffer = AccumulationBuffer(opt.flush_every, clip_range=opt.clip, clip_names=runner.clip_names())

    if resume:
        if not ckpt_path.exists():
            raise ConfigError(f"cannot resume: no checkpoint at {ckpt_path}")
        adam, schedule, start_step = load_run_checkpoint(ckpt_path, runner)
    else:
        adam = AdamState(lr=opt.lr)
        schedule = _build_schedule(config, settings)
        start_step = 0
        if schedule.mode == "astsgd" and schedule.init_main_loss is None:
            _measure_initial_loss(runner, schedule)

    (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    part = getattr(runner, "partition", None)
    if part is not None:
        (out_dir / "partition.json").write_text(json.dumps({
            "source_len": part.source_len,
            "chunk_len": part.chunk_len,
            "overlap_len": part.overlap_len,
            "chunks": [list(span) for span in part.chunks],
        }, indent=2) + "\n")

    columns = list(_BASE_COLUMNS) + runner.eval_columns()
    log = MetricsLog(metrics_path, columns, append=resume)

    params = runner.parameters()
    param_tensors = list(params.values())
    final_eval: dict[str, float] = {}

    if config.steps == 0 and not resume:
        with no_grad():
            bundle = runner.batch_losses(runner.rng_init, training=False, gated=False)
        p_s, p_t = apply_schedule(runner.gate_pairs, schedule, schedule.step_count)
        log.write({
            "step": 0, "loss_main": bundle.main, "loss_spatial": bundle.spatial,
            "loss_temporal": bundle.temporal, "loss_overlap": bundle.overlap,
            "p_spatial": p_s, "p_temporal": p_t, "q": schedule.q,
        })

    for step in range(start_step, config.steps):
        p_s, p_t = apply_schedule(runner.gate_pairs, schedule, schedule.step_count)
        try:
            bundle = runner.batch_losses(runner.rng_batch, training=True)
            grads = backward(bundle.total, params=param_tensors)
        except NumericError as exc:
            raise NumericError(f"training step {step}: {exc}") from exc
        named_grads = {name: grads[tensor] for name, tensor in params.items()}
        mean = buffer.add(named_grads)
        if mean is not None:
            adam_step(params, mean, adam)
            schedule.observe(bundle.main, bundle.spatial)
            if schedule.mode == "astsgd":
                update_q(schedule, schedule.smoothed_spatial, schedule.smoothed_main)
            schedule.step_count += 1

        row = {
            "step": step,
            "loss_main": bundle.main,
            "loss_spatial": bundle.spatial,
            "loss_temporal": bundle.temporal,
            "loss_overlap": bundle.overlap,
            "p_spatial": p_s,
            "p_temporal": p_t,
            "q": schedule.q,
        }
        if (step + 1) % config.eval_every == 0 or step == config.steps - 1:
            final_eval = runner.evaluate()
            row.update(final_eval)
        log.write(row)

    save_run_checkpoint(ckpt_path, runner, adam, schedule, max(config.steps, start_step))
    runner.write_featuremaps(out_dir / "featuremaps")
    return RunResult(
        config=config,
        output_dir=out_dir,
        metrics_path=metrics_path,
        checkpoint_path=ckpt_path,
        final_eval=final_eval,
        steps_run=max(config.steps - start_step, 0),
    )


def evaluate_checkpoint(checkpoint_path, config: ExperimentConfig) -> dict[str, float]:
    """Load a checkpoint into a fresh model and run the task evaluation.

    Writes the scores to eval_metrics.csv next to the other run artifacts
    and returns them.
    """
    runner = build_runner(config)
    load_run_checkpoint(Path(checkpoint_path), runner)
    scores = runner.evaluate()
    out_dir = resolve_output_dir(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_mod.write_metrics_csv(out_dir / "eval_metrics.csv", scores)
    return scores
