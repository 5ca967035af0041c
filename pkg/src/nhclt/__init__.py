"""Martingale decompositions and CLT diagnostics for non-homogeneous Markov
chains with look-ahead rewards."""

__version__ = "0.1.0"

from ._backend import name as backend  # noqa: E402
from .decomposition import (  # noqa: E402
    ChainLaw,
    RewardFunctionArray,
    decompose,
    moments_exact,
)
from .kernels import (  # noqa: E402
    KernelSequence,
    StateGrid,
    StochasticKernel,
    dobrushin_delta,
    minimal_ergodic_coefficient,
)

__all__ = [
    "__version__",
    "backend",
    "ChainLaw",
    "KernelSequence",
    "RewardFunctionArray",
    "StateGrid",
    "StochasticKernel",
    "decompose",
    "dobrushin_delta",
    "minimal_ergodic_coefficient",
    "moments_exact",
]
