"""Minimal numpy tensor library with reverse-mode autodiff."""

from . import functional
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import MLP, Encoder, Module, Parameter, images_to_tensor
from .optim import AdamW, AdamWState, adamw_step, ema_update
from .tensor import Tensor, no_grad

__all__ = [
    "functional", "Tensor", "no_grad", "Module", "Parameter", "Encoder", "MLP",
    "images_to_tensor", "AdamW", "AdamWState", "adamw_step", "ema_update",
    "save_checkpoint", "load_checkpoint",
]
