"""Small reverse-mode differentiable compute stack on numpy."""

from .functional import (
    ACTIVATIONS,
    FeatureStack,
    activation,
    channel_softmax,
    conv2d,
    relayout,
    scaled_tanh,
    warp,
)
from .params import (
    ParamStore,
    adam_step,
    grad_check,
    init_conv,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    get_dtype,
    precision,
    set_precision,
    stack,
    tabs,
)

__all__ = [
    "ACTIVATIONS", "FeatureStack", "ParamStore", "Tensor", "activation", "adam_step",
    "as_tensor", "channel_softmax", "concat", "conv2d", "get_dtype", "grad_check",
    "init_conv", "load_checkpoint", "precision", "relayout", "save_checkpoint",
    "scaled_tanh", "set_precision", "stack", "tabs", "warp",
]
