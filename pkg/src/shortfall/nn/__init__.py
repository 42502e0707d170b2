from .tensor import Tensor, astensor, backward
from .layers import (
    additive_attention,
    bidirectional_gru,
    dense,
    embedding_lookup,
    gru_cell,
)
from .optim import ParameterStore, adam_step, global_norm
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "Tensor", "astensor", "backward",
    "dense", "embedding_lookup", "gru_cell", "bidirectional_gru",
    "additive_attention",
    "ParameterStore", "adam_step", "global_norm",
    "grad_check", "GradCheckReport",
]
