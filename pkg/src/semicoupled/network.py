"""Semi-coupled recurrent convolutional stacks.

Each layer keeps two convolution banks over the same input stream: a
spatial bank applied to the incoming features of the current frame, and a
temporal bank applied to those features concatenated with the squashed
previous cell state.  A multiplicative synthesizer fuses the two branches:

    s_t = Conv(u_prev_t            ; spatial bank)
    c_t = Conv([u_prev_t, sigmoid(c_{t-1})] ; temporal bank)
    u_t = Relu(s_t) * Sigmoid(c_t)

Cell states start at zero.  Restricting the synthesizer to one branch turns
the stack into a purely spatial network (``u = Relu(s)``, no cell state is
read or written) or a purely temporal one (``u = Relu(c)``, the spatial bank
is never touched).  Those restricted evaluations share parameter storage
with the full network and drive the auxiliary sub-goal losses; by
construction the spatial loss has exactly zero gradient into every temporal
bank and vice versa.

Gradient gating: during the main forward pass, each layer's per-branch
parameters are read through a stochastic gate, one fresh gate node per layer
per time step per branch.  Backward therefore masks each (layer, step,
branch) gradient contribution with an independent Bernoulli draw while the
chain gradients flowing to deeper layers stay exact, so the expected gated
gradient is ``(1 - p)`` times the exact gradient, componentwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .autodiff.tensor import GateDescriptor, SharedDraw, Tensor
from .autodiff import ops
from .errors import ConfigError, ContractError, DimensionError, StateError

SynthKind = Literal["main", "spatial_only", "temporal_only"]

_SYNTH_KINDS = ("main", "spatial_only", "temporal_only")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class LayerParams:
    """One semi-coupled layer: a spatial and a temporal convolution bank.

    The temporal kernel reads ``channels_in + channels_out`` channels because
    its input is the layer input concatenated with the squashed cell state.
    Both banks preserve spatial size (stride 1, same padding), which the
    recurrent concatenation requires.
    """

    spatial_kernel: Tensor
    spatial_bias: Tensor
    temporal_kernel: Tensor
    temporal_bias: Tensor
    channels_in: int
    channels_out: int
    kernel_size: int

    def __post_init__(self):
        expect_s = (self.channels_out, self.channels_in, self.kernel_size, self.kernel_size)
        expect_t = (
            self.channels_out,
            self.channels_in + self.channels_out,
            self.kernel_size,
            self.kernel_size,
        )
        if self.spatial_kernel.shape != expect_s:
            raise DimensionError(
                f"spatial kernel must have shape {expect_s}, got {self.spatial_kernel.shape}"
            )
        if self.temporal_kernel.shape != expect_t:
            raise DimensionError(
                f"temporal kernel must have shape {expect_t}, got {self.temporal_kernel.shape}"
            )

    @property
    def padding(self) -> int:
        return (self.kernel_size - 1) // 2


def init_layer(rng: np.random.Generator, channels_in: int, channels_out: int, kernel_size: int = 3) -> LayerParams:
    if kernel_size % 2 != 1:
        raise ConfigError(f"layer kernel size must be odd to preserve spatial size, got {kernel_size}")
    k = kernel_size
    ks = xavier_uniform(rng, (channels_out, channels_in, k, k), channels_in * k * k, channels_out * k * k)
    ct = channels_in + channels_out
    kt = xavier_uniform(rng, (channels_out, ct, k, k), ct * k * k, channels_out * k * k)
    return LayerParams(
        spatial_kernel=Tensor(ks, requires_grad=True),
        spatial_bias=Tensor(np.zeros(channels_out), requires_grad=True),
        temporal_kernel=Tensor(kt, requires_grad=True),
        temporal_bias=Tensor(np.zeros(channels_out), requires_grad=True),
        channels_in=channels_in,
        channels_out=channels_out,
        kernel_size=kernel_size,
    )


@dataclass
class StemParams:
    """Optional per-frame preprocessing before the recurrent stack.

    kind "conv": strided convolution + batch norm + relu (learnable).
    kind "pool": fixed average pooling, useful to cut spatial cost with no
    extra parameters.
    """

    kind: Literal["conv", "pool", "conv_pool"]
    pool: int = 2
    kernel: Tensor | None = None
    bias: Tensor | None = None
    gamma: Tensor | None = None
    beta: Tensor | None = None
    stats: ops.RunningStats | None = None
    stride: int = 2
    kernel_size: int = 3


def init_conv_stem(rng: np.random.Generator, channels_in: int, channels_out: int,
                   kernel_size: int = 3, stride: int = 2,
                   kind: Literal["conv", "conv_pool"] = "conv") -> StemParams:
    k = kernel_size
    kern = xavier_uniform(rng, (channels_out, channels_in, k, k), channels_in * k * k, channels_out * k * k)
    return StemParams(
        kind=kind,
        kernel=Tensor(kern, requires_grad=True),
        bias=Tensor(np.zeros(channels_out), requires_grad=True),
        gamma=Tensor(np.ones(channels_out), requires_grad=True),
        beta=Tensor(np.zeros(channels_out), requires_grad=True),
        stats=ops.RunningStats.create(channels_out),
        stride=stride,
        kernel_size=kernel_size,
    )


@dataclass
class Head:
    """Task head applied to per-step top-layer features.

    "pooled_linear" pools spatially then projects: [N,C,H,W] -> [N,K].
    "conv1x1" maps channels pixelwise: [N,C,H,W] -> [N,K,H,W], optionally
    squashed through a sigmoid for outputs in (0, 1).
    """

    kind: Literal["pooled_linear", "conv1x1"]
    weight: Tensor
    bias: Tensor
    activation: Literal["sigmoid"] | None = None


def init_pooled_linear_head(rng: np.random.Generator, channels: int, out_dim: int) -> Head:
    w = xavier_uniform(rng, (channels, out_dim), channels, out_dim)
    return Head(
        kind="pooled_linear",
        weight=Tensor(w, requires_grad=True),
        bias=Tensor(np.zeros(out_dim), requires_grad=True),
    )


def init_conv1x1_head(rng: np.random.Generator, channels: int, out_channels: int,
                      activation: Literal["sigmoid"] | None = None) -> Head:
    w = xavier_uniform(rng, (out_channels, channels, 1, 1), channels, out_channels)
    return Head(
        kind="conv1x1",
        weight=Tensor(w, requires_grad=True),
        bias=Tensor(np.zeros(out_channels), requires_grad=True),
        activation=activation,
    )


def head_apply(head: Head, feature: Tensor) -> Tensor:
    if head.kind == "pooled_linear":
        return ops.linear(ops.global_avg_pool(feature), head.weight, head.bias)
    out = ops.conv2d(feature, head.weight, head.bias)
    if head.activation == "sigmoid":
        out = ops.sigmoid(out)
    return out


@dataclass
class Shortcut:
    """Residual projection for a two-layer block; None members mean identity."""

    kernel: Tensor | None = None
    bias: Tensor | None = None


@dataclass
class NetState:
    """Per-layer cell states; ``cells[l]`` has the layer-l output shape."""

    cells: list[Tensor]
    time_index: int = 0


@dataclass
class SemiCoupledNet:
    layers: list[LayerParams]
    heads: dict[str, Head]
    stem: StemParams | None = None
    shortcuts: list[Shortcut] = field(default_factory=list)
    residual: bool = False

    def parameters(self) -> dict[str, Tensor]:
        """Stable name -> tensor map covering every learnable array."""
        named: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            named[f"layer{i}.spatial_kernel"] = layer.spatial_kernel
            named[f"layer{i}.spatial_bias"] = layer.spatial_bias
            named[f"layer{i}.temporal_kernel"] = layer.temporal_kernel
            named[f"layer{i}.temporal_bias"] = layer.temporal_bias
        if self.stem is not None and self.stem.kind in ("conv", "conv_pool"):
            named["stem.kernel"] = self.stem.kernel
            named["stem.bias"] = self.stem.bias
            named["stem.gamma"] = self.stem.gamma
            named["stem.beta"] = self.stem.beta
        for i, sc in enumerate(self.shortcuts):
            if sc.kernel is not None:
                named[f"shortcut{i}.kernel"] = sc.kernel
                named[f"shortcut{i}.bias"] = sc.bias
        for name, head in sorted(self.heads.items()):
            named[f"head.{name}.weight"] = head.weight
            named[f"head.{name}.bias"] = head.bias
        return named

    def spatial_params(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend([layer.spatial_kernel, layer.spatial_bias])
        return out

    def temporal_params(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend([layer.temporal_kernel, layer.temporal_bias])
        return out

    def feature_hw(self, h: int, w: int) -> tuple[int, int]:
        """Spatial size of stack features for an h x w input frame."""
        if self.stem is None:
            return h, w
        if self.stem.kind == "pool":
            return h // self.stem.pool, w // self.stem.pool
        k, s = self.stem.kernel_size, self.stem.stride
        p = (k - 1) // 2
        h = (h + 2 * p - k) // s + 1
        w = (w + 2 * p - k) // s + 1
        if self.stem.kind == "conv_pool":
            h, w = h // self.stem.pool, w // self.stem.pool
        return h, w


def build_net(
    seed: int,
    channels_in: int,
    widths: list[int],
    head_specs: dict[str, tuple],
    kernel_size: int = 3,
    stem: str | None = None,
    stem_channels: int | None = None,
    residual: bool = False,
) -> SemiCoupledNet:
    """Construct a stack with Xavier-initialised parameters.

    ``head_specs`` maps head name to ("pooled_linear", out_dim) or
    ("conv1x1", out_channels, activation).  ``stem`` is None, "pool" (2x2
    average pool), "conv" (stride-2 conv + batch norm + relu), or
    "conv_pool" (stride-1 conv + batch norm + relu + 2x2 average pool;
    the pooled downsample keeps single-pixel motion smooth in feature
    space instead of folding it into stride phase).
    """
    rng = np.random.default_rng(seed)
    stem_params = None
    stack_in = channels_in
    if stem == "pool":
        stem_params = StemParams(kind="pool", pool=2)
    elif stem in ("conv", "conv_pool"):
        stem_params = init_conv_stem(
            rng, channels_in, stem_channels or widths[0],
            stride=2 if stem == "conv" else 1, kind=stem,
        )
        stack_in = stem_channels or widths[0]
    elif stem is not None:
        raise ConfigError(f"unknown stem kind {stem!r}")

    layers = []
    c_prev = stack_in
    for c_out in widths:
        layers.append(init_layer(rng, c_prev, c_out, kernel_size))
        c_prev = c_out

    shortcuts: list[Shortcut] = []
    if residual:
        block_in = stack_in
        for i in range(1, len(widths), 2):
            block_out = widths[i]
            if block_in == block_out:
                shortcuts.append(Shortcut())
            else:
                k = xavier_uniform(rng, (block_out, block_in, 1, 1), block_in, block_out)
                shortcuts.append(Shortcut(
                    kernel=Tensor(k, requires_grad=True),
                    bias=Tensor(np.zeros(block_out), requires_grad=True),
                ))
            block_in = block_out

    heads = {}
    for name, spec in head_specs.items():
        if spec[0] == "pooled_linear":
            heads[name] = init_pooled_linear_head(rng, widths[-1], spec[1])
        elif spec[0] == "conv1x1":
            activation = spec[2] if len(spec) > 2 else None
            heads[name] = init_conv1x1_head(rng, widths[-1], spec[1], activation)
        else:
            raise ConfigError(f"unknown head kind {spec[0]!r}")

    return SemiCoupledNet(
        layers=layers,
        heads=heads,
        stem=stem_params,
        shortcuts=shortcuts,
        residual=residual,
    )


# ---------------------------------------------------------------------------
# gates
# ---------------------------------------------------------------------------

@dataclass
class GatePair:
    spatial: GateDescriptor
    temporal: GateDescriptor


def build_gates(n_layers: int, seed: int, p_spatial: float = 0.5, p_temporal: float = 0.5) -> list[GatePair]:
    """One spatial and one temporal gate descriptor per layer.

    Every (layer, time step, branch) application creates its own gate node,
    so draws are independent across instances while each descriptor's stream
    stays reproducible from the seed.
    """
    seq = np.random.SeedSequence(seed)
    children = seq.spawn(2 * n_layers)
    gates = []
    for i in range(n_layers):
        gates.append(GatePair(
            spatial=GateDescriptor(p_spatial, children[2 * i], branch_tag="spatial"),
            temporal=GateDescriptor(p_temporal, children[2 * i + 1], branch_tag="temporal"),
        ))
    return gates


def _gated_bank(kernel: Tensor, bias: Tensor, gate: GateDescriptor | None) -> tuple[Tensor, Tensor]:
    if gate is None:
        return kernel, bias
    shared = SharedDraw(gate)
    return (
        ops.stochastic_gate(kernel, gate, shared),
        ops.stochastic_gate(bias, gate, shared),
    )


# ---------------------------------------------------------------------------
# forward evaluation
# ---------------------------------------------------------------------------

def layer_forward(
    u_prev: Tensor,
    c_prev: Tensor | None,
    layer: LayerParams,
    synth: SynthKind = "main",
    gates: GatePair | None = None,
) -> tuple[Tensor, Tensor | None, Tensor | None]:
    """One layer at one time step; returns (u, c, s).

    ``c`` is None for spatial_only (no cell is read or written) and ``s`` is
    None for temporal_only (the spatial bank is never evaluated).
    """
    if synth not in _SYNTH_KINDS:
        raise ContractError(f"unknown synthesizer kind {synth!r}")
    pad = layer.padding

    s = None
    if synth in ("main", "spatial_only"):
        ks, bs = _gated_bank(layer.spatial_kernel, layer.spatial_bias, gates.spatial if gates else None)
        s = ops.conv2d(u_prev, ks, bs, stride=1, padding=pad)

    c = None
    if synth in ("main", "temporal_only"):
        if c_prev is None:
            raise StateError("temporal branch needs a cell state tensor")
        if c_prev.shape != (u_prev.shape[0], layer.channels_out) + u_prev.shape[2:]:
            raise StateError(
                f"cell state shape {c_prev.shape} does not match layer output "
                f"{(u_prev.shape[0], layer.channels_out) + u_prev.shape[2:]}"
            )
        kt, bt = _gated_bank(layer.temporal_kernel, layer.temporal_bias, gates.temporal if gates else None)
        stacked = ops.concat_channels([u_prev, ops.sigmoid(c_prev)])
        c = ops.conv2d(stacked, kt, bt, stride=1, padding=pad)

    if synth == "main":
        u = ops.mul(ops.relu(s), ops.sigmoid(c))
    elif synth == "spatial_only":
        u = ops.relu(s)
    else:
        u = ops.relu(c)
    return u, c, s


def zero_state(net: SemiCoupledNet, batch: int, h: int, w: int) -> NetState:
    fh, fw = net.feature_hw(h, w)
    cells = [Tensor(np.zeros((batch, layer.channels_out, fh, fw))) for layer in net.layers]
    return NetState(cells=cells, time_index=0)


@dataclass
class SequenceResult:
    features: list[Tensor]
    state: NetState
    internals: list[tuple[Tensor | None, Tensor | None, Tensor]] | None = None


def _stem_forward(net: SemiCoupledNet, x: Tensor, training: bool, update_stats: bool) -> Tensor:
    stem = net.stem
    if stem is None:
        return x
    if stem.kind == "pool":
        return ops.avg_pool2d(x, stem.pool)
    p = (stem.kernel_size - 1) // 2
    h = ops.conv2d(x, stem.kernel, stem.bias, stride=stem.stride, padding=p)
    h = ops.batch_norm(h, stem.gamma, stem.beta, stem.stats, training, update_stats=update_stats)
    h = ops.relu(h)
    if stem.kind == "conv_pool":
        h = ops.avg_pool2d(h, stem.pool)
    return h


def run_sequence(
    frames: list[Tensor],
    net: SemiCoupledNet,
    synth: SynthKind = "main",
    gates: list[GatePair] | None = None,
    init_state: NetState | None = None,
    training: bool = False,
    update_stats: bool | None = None,
    collect_internal: bool = False,
) -> SequenceResult:
    """Unroll the stack over a frame list; returns per-step top features.

    Cell states start at zero unless ``init_state`` is given.  Outputs at
    step t depend only on frames up to t.  For spatial_only the state is
    passed through untouched.
    """
    if not frames:
        raise ContractError("run_sequence needs at least one frame")
    if gates is not None and len(gates) != len(net.layers):
        raise ContractError(f"need one gate pair per layer ({len(net.layers)}), got {len(gates)}")
    if update_stats is None:
        update_stats = training

    n, _, h, w = frames[0].shape
    state = init_state if init_state is not None else zero_state(net, n, h, w)
    if len(state.cells) != len(net.layers):
        raise StateError(f"state has {len(state.cells)} cells for {len(net.layers)} layers")

    features: list[Tensor] = []
    internals: list[tuple] | None = [] if collect_internal else None
    cells = list(state.cells)
    t_index = state.time_index

    for x in frames:
        if x.shape[0] != n or x.shape[2:] != (h, w):
            raise DimensionError(f"all frames must share shape, got {x.shape} after {(n, h, w)}")
        u = _stem_forward(net, x, training, update_stats)
        block_in = u
        last = (None, None, u)
        for li, layer in enumerate(net.layers):
            pair = gates[li] if gates is not None else None
            u, c, s = layer_forward(u, cells[li], layer, synth, pair)
            if c is not None:
                cells[li] = c
            if net.residual and li % 2 == 1:
                sc = net.shortcuts[li // 2]
                shortcut_val = block_in if sc.kernel is None else ops.conv2d(block_in, sc.kernel, sc.bias)
                u = ops.add(u, shortcut_val)
                block_in = u
            last = (s, c, u)
        features.append(u)
        if internals is not None:
            internals.append(last)
        t_index += 1

    return SequenceResult(features=features, state=NetState(cells=cells, time_index=t_index), internals=internals)


def sequence_logits(features: list[Tensor], head: Head, reduction: str = "time_average") -> Tensor:
    """Sequence-level prediction from per-step features.

    reduction "time_average" averages the head output over every step;
    "final_step" reads only the last step, which keeps the prediction
    sensitive to frame order (a time-averaged linear head is invariant
    to step permutations, so order information must then live in the
    average activation levels rather than in the trajectory).
    """
    if reduction == "final_step":
        return head_apply(head, features[-1])
    if reduction != "time_average":
        raise ValueError(f"unknown reduction {reduction!r}")
    return ops.time_average([head_apply(head, f) for f in features])


# ---------------------------------------------------------------------------
# sub-goal losses
# ---------------------------------------------------------------------------

@dataclass
class SubgoalTargets:
    """Targets for the main goal and the optional auxiliary goals.

    main_label / spatial_label are integer class arrays of shape [N];
    temporal_frames is a per-step list of dense arrays matching the temporal
    head output.  Either auxiliary target may be None, dropping that loss.
    """

    main_label: np.ndarray
    spatial_label: np.ndarray | None = None
    temporal_frames: list[np.ndarray] | None = None


@dataclass
class SubgoalLosses:
    main: Tensor
    spatial: Tensor | None
    temporal: Tensor | None
    total: Tensor


def subgoal_losses(
    frames: list[Tensor],
    net: SemiCoupledNet,
    targets: SubgoalTargets,
    gates: list[GatePair] | None = None,
    spatial_weight: float = 1.0,
    temporal_weight: float = 1.0,
    training: bool = True,
) -> SubgoalLosses:
    """Main loss plus auxiliary losses from the restricted re-evaluations.

    The spatial loss is computed from a spatial_only pass (the temporal banks
    never enter that graph, so their gradients under it are exactly zero) and
    the temporal loss from a temporal_only pass (zero gradients into every
    spatial bank).  total = main + spatial_weight * spatial +
    temporal_weight * temporal, with zero-weight terms skipped so that
    weights (0, 0) reduce the graph to the plain main network.

    Gates apply to the main pass only.  The stochastic switch arbitrates how
    the shared objective is split between the branches; the auxiliary losses
    are each branch's own teacher and always propagate at full strength.
    """
    result = run_sequence(frames, net, "main", gates=gates, training=training)
    logits = sequence_logits(result.features, net.heads["main"])
    loss_main = ops.softmax_cross_entropy(logits, targets.main_label)

    loss_spatial = None
    if targets.spatial_label is not None:
        s_result = run_sequence(frames, net, "spatial_only", gates=None, training=training,
                                update_stats=False)
        s_head = net.heads.get("spatial", net.heads["main"])
        loss_spatial = ops.softmax_cross_entropy(
            sequence_logits(s_result.features, s_head), targets.spatial_label
        )

    loss_temporal = None
    if targets.temporal_frames is not None:
        if len(targets.temporal_frames) != len(frames):
            raise ContractError(
                f"need one temporal target per frame ({len(frames)}), got {len(targets.temporal_frames)}"
            )
        t_result = run_sequence(frames, net, "temporal_only", gates=None, training=training,
                                update_stats=False)
        t_head = net.heads["temporal"]
        steps = [
            ops.mse(head_apply(t_head, f), ops.as_tensor(target))
            for f, target in zip(t_result.features, targets.temporal_frames)
        ]
        loss_temporal = ops.time_average(steps)

    total = loss_main
    if loss_spatial is not None and spatial_weight != 0.0:
        total = ops.add(total, ops.scale(loss_spatial, spatial_weight))
    if loss_temporal is not None and temporal_weight != 0.0:
        total = ops.add(total, ops.scale(loss_temporal, temporal_weight))
    return SubgoalLosses(main=loss_main, spatial=loss_spatial, temporal=loss_temporal, total=total)


# ---------------------------------------------------------------------------
# encoder / decoder
# ---------------------------------------------------------------------------

def decode_autoregressive(
    net: SemiCoupledNet,
    first_input: Tensor,
    steps: int,
    init_state: NetState,
    gates: list[GatePair] | None = None,
    training: bool = False,
    synth: SynthKind = "main",
    head_name: str = "main",
) -> list[Tensor]:
    """Roll a decoder forward, feeding each predicted frame back as input.

    ``init_state`` is consumed as-is (typically an encoder's final state).
    The dense head named ``head_name`` maps features to a frame with the same
    channel count as the decoder input.  With a restricted ``synth`` the
    rollout uses only that branch (spatial_only never reads the state).
    """
    if steps < 1:
        raise ContractError(f"decoder needs at least one step, got {steps}")
    head = net.heads[head_name]
    if head.kind != "conv1x1":
        raise ContractError("autoregressive decoding needs a dense conv1x1 head")
    outputs: list[Tensor] = []
    x = first_input
    state = init_state
    for _ in range(steps):
        result = run_sequence([x], net, synth, gates=gates, init_state=state,
                              training=training, update_stats=False)
        state = result.state
        frame = head_apply(head, result.features[0])
        outputs.append(frame)
        x = frame
    return outputs
