"""Discrete Kaehler geometry laboratory.

Finite-volume models of invariant Kaehler potentials on the flat torus and
on the round sphere, with energy functionals, Monge-Ampere continuity and
flow solvers, the Mabuchi, Calabi and Darvas metrics, and the automorphism
orbit machinery behind properness modulo a group.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvexificationFailure, Inconclusive, KahlerLabError,  # noqa: E402
                     ModelMismatch, NonConvergence, NormalizationAmbiguity, PositivityLoss,
                     StepRejected, StepTooLarge, TruncationExceeded)
from .model import Potential, make_model, sample_potential  # noqa: E402

__all__ = ["__version__", "make_model", "Potential", "sample_potential", "ConfigError",
           "ConvexificationFailure", "Inconclusive", "KahlerLabError", "ModelMismatch",
           "NonConvergence", "NormalizationAmbiguity", "PositivityLoss", "StepRejected",
           "StepTooLarge", "TruncationExceeded"]
