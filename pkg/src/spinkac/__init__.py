"""Exchange-collision kinetics on the discrete hypercube.

Core objects: quadratic Gibbs measures on {-1,+1}^n, a mass-exchanging
binary collision between configurations, the induced nonlinear flow and
its entropy dissipation, branching-tree and marked-partition sampling
representations, the matching N-configuration exchange process, and the
conditioned single-spin walk used to certify entropy-decay constants.
"""

from .core import (
    gibbs,
    log_gibbs_weights,
    magnetization_profile,
    relative_entropy,
    solve_field,
    tv_distance,
)
from .collision import CollisionContext, build_transport_kernel, exchange
from .modelio import Model, parse_model

__all__ = [
    "CollisionContext",
    "Model",
    "build_transport_kernel",
    "exchange",
    "gibbs",
    "log_gibbs_weights",
    "magnetization_profile",
    "parse_model",
    "relative_entropy",
    "solve_field",
    "tv_distance",
]

__version__ = "0.1.0"
