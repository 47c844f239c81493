"""From-scratch CNN training and evaluation engine for cervical cell images.

Submodules:
  ops      differentiable kernels with hand-derived backward passes
  model    the fixed conv stack, forward/backward, prediction
  weights  binary weight serialization
  optim    Adam and the training loop
  augment  image augmentation operators and dataset expansion
  dataio   dataset loading, preprocessing, splits, k-fold
  metrics  confusion matrix and derived measures
  cli      command-line pipeline
"""
from .errors import CytoError, FormatError, LoadError, ShapeError, ValidationError
from .model import Model, build_model, forward, backward, param_count, predict
from .weights import load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "CytoError", "FormatError", "LoadError", "ShapeError", "ValidationError",
    "Model", "build_model", "forward", "backward", "param_count", "predict",
    "load_weights", "save_weights", "__version__",
]
