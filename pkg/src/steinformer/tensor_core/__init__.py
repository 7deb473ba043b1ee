from .gradcheck import GradcheckResult, gradcheck
from .nn import NORMS, BatchNorm2d, Conv2d, GroupNorm, Module, ModuleList, Parameter, make_norm
from .ops import (
    ConvSpec,
    absolute,
    add,
    batch_norm,
    bilinear_resize,
    clamp,
    concat,
    conv2d,
    div,
    elementwise,
    gelu,
    group_norm,
    grouped_sandwich,
    log,
    mean_all,
    mean_axes,
    mul,
    power,
    relu,
    reshape,
    scale,
    shift,
    sigmoid,
    softmax,
    split,
    sub,
    sum_all,
    take,
)
from .tensor import Tensor, backward, no_grad

__all__ = [
    "BatchNorm2d",
    "Conv2d",
    "GroupNorm",
    "NORMS",
    "ConvSpec",
    "GradcheckResult",
    "Module",
    "ModuleList",
    "Parameter",
    "Tensor",
    "absolute",
    "add",
    "backward",
    "batch_norm",
    "bilinear_resize",
    "clamp",
    "concat",
    "conv2d",
    "div",
    "elementwise",
    "gelu",
    "gradcheck",
    "group_norm",
    "grouped_sandwich",
    "log",
    "make_norm",
    "mean_all",
    "mean_axes",
    "mul",
    "no_grad",
    "power",
    "relu",
    "reshape",
    "scale",
    "shift",
    "sigmoid",
    "softmax",
    "split",
    "sub",
    "sum_all",
    "take",
]
