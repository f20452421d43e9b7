"""Tabular reinforcement learning laboratory.

Exact planning, generative-model learners, optimistic online and
pessimistic offline learners, TV-robust MDPs, policy optimisation and a
preference-optimisation sandbox, with a seeded experiment harness.
"""

from .errors import ConfigError, DimensionError, NumericError
from .mdp import DiscountedMdp, EpisodicMdp, Policy

__version__ = "0.1.0"

__all__ = ["ConfigError", "DimensionError", "DiscountedMdp", "EpisodicMdp", "NumericError",
           "Policy"]
