"""Minimal float64 reverse-mode differentiation: tensors, layers, Adam."""
from .checkpoint import load_checkpoint, save_checkpoint, store_from_dict, store_to_dict
from .gradcheck import GradCheckReport, finite_difference_check
from .optim import NoTrainableParameters, OptimizerState, optimizer_step
from .params import BLOCK_ORDER, Block, GruCell, Mlp, Param, ParamStore, glorot_uniform
from .tensor import (
    NumericError,
    Tensor,
    add,
    apply_op,
    backward,
    concat,
    gru_cell,
    masked_mape,
    matmul,
    mul,
    no_grad,
    relu,
    rows,
    scale,
    sigmoid,
    softplus,
    spmm,
    sq_dist,
    sub,
    take_rows,
    tanh,
    total,
)

__all__ = [
    "BLOCK_ORDER", "Block", "GradCheckReport", "GruCell", "Mlp", "NoTrainableParameters", "NumericError",
    "OptimizerState", "Param", "ParamStore", "Tensor", "add", "apply_op", "backward", "concat",
    "finite_difference_check", "glorot_uniform", "gru_cell", "load_checkpoint", "masked_mape", "matmul", "mul",
    "no_grad", "optimizer_step", "relu", "rows", "save_checkpoint", "scale", "sigmoid", "softplus", "spmm",
    "sq_dist", "store_from_dict", "store_to_dict", "sub", "take_rows", "tanh", "total",
]
