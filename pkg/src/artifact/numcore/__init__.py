from artifact.numcore.layers import (
    activation,
    dropout,
    dwsep_conv,
    layer_norm,
    linear,
    mlp,
    softmax_attention,
)
from artifact.numcore.ops import cross_entropy, matmul
from artifact.numcore.rng import RngState
from artifact.numcore.tensor import Tape, Var, as_var, backward

__all__ = [
    "RngState", "Tape", "Var", "activation", "as_var", "backward", "cross_entropy",
    "dropout", "dwsep_conv", "layer_norm", "linear", "matmul", "mlp", "softmax_attention",
]
