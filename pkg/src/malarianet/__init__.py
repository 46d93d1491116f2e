"""malarianet: a from-scratch bottleneck-residual CNN pipeline for
classifying blood-cell images as parasitized or uninfected.

The numerical engine (tensors, layer kernels, reverse-mode autodiff) is
implemented here on plain numpy arrays; the package adds the data pipeline,
training loop, evaluation report, binary checkpoints, an HTTP inference
service, and an sklearn-style estimator facade.
"""

from .estimator import CellImageClassifier
from .model import ModelGraph, build_model, parameter_count
from .tensor import GradTape, ParamTensor, Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "CellImageClassifier",
    "GradTape",
    "ModelGraph",
    "ParamTensor",
    "Tensor",
    "backward",
    "build_model",
    "parameter_count",
    "__version__",
]
