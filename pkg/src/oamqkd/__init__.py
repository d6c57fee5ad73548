"""Simulation and analysis of OAM-encoded high-dimensional QKD over fiber.

The package models a decoy-state BB84 link whose alphabet is carried by
orbital-angular-momentum fiber modes, in three flavors: a 2D protocol, a
4D protocol, and two 2D protocols multiplexed on disjoint mode pairs.
It simulates pulse-by-pulse transmission through the preparation optics,
the fiber, and the sorting receiver, then runs decoy-state analysis on
the resulting click statistics to bound single-photon yields and extract
secret key rates.

Layering, bottom up:

  statespace   kets, mutually unbiased bases, entropies, QBER thresholds
  optics       preparation stages, mode sorter, receiver projections
  channel      fiber loss, modal crosstalk, group-delay walk-off
  scenario     configuration dataclasses, presets, file loading
  montecarlo   pulse-level simulation engine and detection matrices
  decoy        yield/error bounds and secret key rates from gains
  cli          command-line front end
"""

from .exceptions import (
    ConfigFileError,
    ConfigurationError,
    DecoyDataError,
    DomainError,
    InvariantError,
    ModeSetError,
    NormalizationError,
    OamQkdError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigFileError",
    "ConfigurationError",
    "DecoyDataError",
    "DomainError",
    "InvariantError",
    "ModeSetError",
    "NormalizationError",
    "OamQkdError",
    "__version__",
]
