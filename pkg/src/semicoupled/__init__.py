"""Semi-coupled spatio-temporal sequence learning.

A dense float64 autodiff engine with stochastic gradient gates, recurrent
convolutional stacks whose spatial and temporal branches can be re-evaluated
in isolation, switch-style gradient schedules, overlapping-chunk processing
for long sequences, synthetic sequence tasks, forecast metrics, and a
config-driven experiment harness.
"""

from . import autodiff, chains, checkpoint, harness, ltsc, metrics, optim, tasks
from .autodiff import GateDescriptor, SharedDraw, Tensor, backward, no_grad, ops, zero_grads
from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    GenerationError,
    LabelError,
    NumericError,
    ParameterError,
    SemiCoupledError,
    StateError,
)
from .network import (
    GatePair,
    Head,
    LayerParams,
    NetState,
    SemiCoupledNet,
    SequenceResult,
    SubgoalLosses,
    SubgoalTargets,
    build_gates,
    build_net,
    decode_autoregressive,
    head_apply,
    layer_forward,
    run_sequence,
    sequence_logits,
    subgoal_losses,
    zero_state,
)
from .optim import (
    AccumulationBuffer,
    AdamState,
    SwitchSchedule,
    adam_step,
    apply_schedule,
    gate_probabilities,
    update_q,
)

__version__ = "0.1.0"

__all__ = [
    "AccumulationBuffer",
    "AdamState",
    "ConfigError",
    "ContractError",
    "DegenerateInputError",
    "DimensionError",
    "GateDescriptor",
    "GatePair",
    "GenerationError",
    "Head",
    "LabelError",
    "LayerParams",
    "NetState",
    "NumericError",
    "ParameterError",
    "SemiCoupledError",
    "SemiCoupledNet",
    "SequenceResult",
    "SharedDraw",
    "StateError",
    "SubgoalLosses",
    "SubgoalTargets",
    "SwitchSchedule",
    "Tensor",
    "adam_step",
    "apply_schedule",
    "autodiff",
    "backward",
    "build_gates",
    "build_net",
    "chains",
    "checkpoint",
    "decode_autoregressive",
    "gate_probabilities",
    "harness",
    "head_apply",
    "layer_forward",
    "ltsc",
    "metrics",
    "no_grad",
    "ops",
    "optim",
    "run_sequence",
    "sequence_logits",
    "subgoal_losses",
    "tasks",
    "update_q",
    "zero_grads",
    "zero_state",
]
