"""Tape-based reverse-mode differentiation on numpy arrays, plus Adam."""

from . import ops
from .gradcheck import GradCheckResult, finite_diff_check
from .optim import AdamState, adam_step, clip_grad_norm
from .params import ParamStore, load_checkpoint, read_checkpoint, save_checkpoint
from .tensor import Tape, Tensor, as_tensor

__all__ = [
    "ops", "Tape", "Tensor", "as_tensor", "ParamStore", "AdamState", "adam_step",
    "clip_grad_norm", "finite_diff_check", "GradCheckResult", "save_checkpoint",
    "read_checkpoint", "load_checkpoint",
]
