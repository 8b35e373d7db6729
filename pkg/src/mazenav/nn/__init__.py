from . import autograd, checkpoint, layers, optim
from .autograd import Tensor, no_grad

__all__ = ["autograd", "checkpoint", "layers", "optim", "Tensor", "no_grad"]
