"""Stochastic stability laboratory for Markov chains.

Simulate chains under stopping-time sampling policies, verify drift criteria
statistically against exact finite-chain oracles, estimate convergence rates
via coupling and direct distance estimation, and reproduce the quantized
control-over-erasure-channel stability experiment.
"""

__version__ = "0.1.0"

from . import chains, drift, finite, mixing, netctl, rates, stats, streams  # noqa: F401
