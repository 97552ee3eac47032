"""Dynamics-invariant human-UAV interaction detection toolkit.

Subpackages cover closed-loop simulation of decoupled UAV loops, relay-based
model identification, transformation of state traces into a canonical
training-and-inference domain (TID), synthetic interaction dataset
generation, a from-scratch LSTM sequence classifier, and a streaming
two-stage detector.
"""

from .platforms import (
    ControlledLoop,
    LoopKind,
    LoopModel,
    PDGains,
    PlatformModel,
    PropulsionParams,
    StateTrace,
    base_platform,
    load_platform,
    save_platform,
    test_platform,
)

__version__ = "0.1.0"

__all__ = [
    "ControlledLoop",
    "LoopKind",
    "LoopModel",
    "PDGains",
    "PlatformModel",
    "PropulsionParams",
    "StateTrace",
    "base_platform",
    "test_platform",
    "load_platform",
    "save_platform",
    "__version__",
]
