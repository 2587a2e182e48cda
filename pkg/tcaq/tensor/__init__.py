"""Tensor module - dense tensors, autodiff tape, op set and archive format."""

from . import ops
from .archive import ArchiveError, load_archive, save_archive
from .core import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    TensorError,
    backward,
    current_tape,
    get_default_dtype,
    no_grad,
    precision,
)
from .gradcheck import finite_difference_check
from .optim import Adam

__all__ = [
    "Adam",
    "ArchiveError",
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "Tensor",
    "TensorError",
    "backward",
    "current_tape",
    "finite_difference_check",
    "get_default_dtype",
    "load_archive",
    "no_grad",
    "ops",
    "precision",
    "save_archive",
]
