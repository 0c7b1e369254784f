"""Neural solvers and operator-learning models for elastostatic bars and
plates, with a 1D FEM reference, quadrature/sampling utilities, and a
benchmark harness."""

from . import autodiff, femref, harness, kernels, mechanics, metrics, network, neuralfem, operators, optim, quadrature

__all__ = [
    "autodiff", "femref", "harness", "kernels", "mechanics", "metrics",
    "network", "neuralfem", "operators", "optim", "quadrature",
]

__version__ = "0.1.0"
