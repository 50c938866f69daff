"""Small numpy-backed tensor library with reverse-mode autodiff and Adam."""

from . import ops
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .optim import ParamStore, adam_step
from .tensor import (
    DisconnectedGraph,
    NumericalFault,
    ShapeMismatch,
    Tape,
    Tensor,
    as_tensor,
    get_dtype,
    get_precision,
    precision,
    set_precision,
)

__all__ = [
    "CheckpointError",
    "DisconnectedGraph",
    "NumericalFault",
    "ParamStore",
    "ShapeMismatch",
    "Tape",
    "Tensor",
    "adam_step",
    "as_tensor",
    "get_dtype",
    "get_precision",
    "ops",
    "precision",
    "read_checkpoint",
    "set_precision",
    "write_checkpoint",
]
