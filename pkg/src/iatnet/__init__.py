"""Integral activation transform layers, GDNN utilities and experiment harness."""

from .basis import BasisFamily, BasisSet, Role, make_basis, pair_integral, sign_change_roots
from .iat import (
    ANALYTIC,
    ActivationPattern,
    Discretized,
    IATLayerConfig,
    Sigma,
    activation_matrix,
    forward_analytic_relu,
    forward_discretized,
    jacobian_analytic_relu,
    jacobian_discretized,
    pattern,
    root_sensitivity,
)
from .net import Arch, Network, TrainConfig, grad_check, init_network, train

__version__ = "0.1.0"

__all__ = [
    "ANALYTIC", "ActivationPattern", "Arch", "BasisFamily", "BasisSet", "Discretized", "IATLayerConfig",
    "Network", "Role", "Sigma", "TrainConfig", "activation_matrix", "forward_analytic_relu",
    "forward_discretized", "grad_check", "init_network", "jacobian_analytic_relu", "jacobian_discretized",
    "make_basis", "pair_integral", "pattern", "root_sensitivity", "sign_change_roots", "train",
]
