"""Power-of-d-choices supermarket model in heavy traffic: simulation and limits."""
from .core_math import INFINITY, Eta, ModelParams

__all__ = ["INFINITY", "Eta", "ModelParams"]
__version__ = "0.1.0"
