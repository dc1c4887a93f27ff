"""Learning subspace classifiers: SM, LSM, ALSM, LMSM and G-LMSM."""
from .kernels import BACKEND
from .model import ARCHITECTURES, SubspaceModel, build_model, load_model, save_model
from .mutual import HeadConfig, ReferenceBank, backward, forward, similarity
from .train import TrainConfig, evaluate, grad_check, train

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES", "BACKEND", "HeadConfig", "ReferenceBank", "SubspaceModel",
    "TrainConfig", "backward", "build_model", "evaluate", "forward", "grad_check",
    "load_model", "save_model", "similarity", "train",
]
