"""Geometry of classification regions and decision boundaries of smooth classifiers."""
from .network import (
    Checkpoint,
    Gradient,
    Layer,
    Network,
    QuadraticSurrogate,
    forward,
    grad_F,
    hvp_F,
    linear_network,
    predict,
    sphere_surrogate,
)

__version__ = "0.1.0"
