from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    aspp_forward,
    attention_forward,
    conv2d_forward,
    se_forward,
    sigmoid,
)
from .model import (
    ForwardOutput,
    ModelParams,
    NetConfig,
    backward,
    forward,
    init_params,
    param_shapes,
    residual_unit,
)


def se_block(x, w1, w2):
    return se_forward(x, w1, w2)[0]


def attention_gate(f, w1, w2, b1, b2):
    return attention_forward(f, w1, w2, b1, b2)[0]


def aspp(x, branch_w, branch_b, proj_w, proj_b, rates):
    return aspp_forward(x, branch_w, branch_b, proj_w, proj_b, rates)[0]
