"""
=============================================================================
CONTEXT BLOCK
=============================================================================
Module: utils.py
Description: Shared helpers and the exception hierarchy for aac-lab
Author: Hive Mind Collective (Queen + Workers)
Created: 2026-10-18

Purpose:
    Provide small pure functions used across the package:
    - Discount / entropy reparameterizations (g -> gamma, h -> H)
    - Discounted and undiscounted returns
    - Finite-value checks that raise explicit numeric errors
    - Seed derivation for per-member reproducibility
    - Stable configuration hashing for artifact provenance

Key Functions:
    - gamma_from_g: gamma = 1 - exp(g)
    - target_entropy: H = h * (-|A|)
    - discounted_return: sum_i gamma^i r_i
    - check_finite: raise NumericError on NaN/inf
    - config_hash: short sha256 of a canonical JSON dump

Exceptions:
    AACLabError
    ├── InvalidInputError (ValueError)
    │   └── RunInputError
    ├── StateError (RuntimeError)
    └── NumericError (ArithmeticError)
=============================================================================
"""

import hashlib
import json
import math
from typing import Any, Dict, Optional, Sequence

import numpy as np


class AACLabError(Exception):
    """Base class for all aac-lab errors."""


class InvalidInputError(AACLabError, ValueError):
    """Raised on dimension mismatches and invalid arguments."""


class RunInputError(InvalidInputError):
    """Raised when a run directory, checkpoint or config file is missing or corrupt."""

    def __init__(self, path: Any, reason: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")


class StateError(AACLabError, RuntimeError):
    """Raised when an operation is called in the wrong lifecycle state."""


class NumericError(AACLabError, ArithmeticError):
    """
    Raised when a NaN or infinity is detected.

    Attributes:
        context: Diagnostic key/values (member id, operation, ...)
    """

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        self.context = dict(context or {})
        if self.context:
            details = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
            message = f"{message} [{details}]"
        super().__init__(message)

    def with_context(self, **context: Any) -> "NumericError":
        """Return a copy of this error with extra diagnostic context."""
        merged = {**self.context, **context}
        base = str(self).split(" [", 1)[0]
        return NumericError(base, merged)


def check_finite(name: str, value: Any, **context: Any) -> None:
    """
    Raise NumericError if any element of value is NaN or infinite.

    Args:
        name: Quantity name used in the error message
        value: Scalar or array-like to check
        **context: Extra diagnostic context
    """
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NumericError(f"non-finite values in {name} ({bad} of {arr.size})", context)


def gamma_from_g(g: float) -> float:
    """Discount factor from its log-space parameter: gamma = 1 - exp(g)."""
    return 1.0 - math.exp(g)


def target_entropy(h: float, action_dim: int) -> float:
    """Target entropy as a coefficient on the -|A| heuristic."""
    return h * (-float(action_dim))


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    """
    Discounted return G = sum_i gamma^i * r_i starting at t = 0.

    Args:
        rewards: Reward sequence
        gamma: Discount in [0, 1]

    Returns:
        The discounted sum (0.0 for an empty sequence)
    """
    if not 0.0 <= gamma <= 1.0:
        raise InvalidInputError(f"gamma must lie in [0, 1], got {gamma}")
    total = 0.0
    weight = 1.0
    for r in rewards:
        total += weight * float(r)
        weight *= gamma
    return total


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic 32-bit seed for a (seed, path...) coordinate."""
    if seed < 0:
        raise InvalidInputError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence([seed, *path])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def config_hash(payload: Dict[str, Any]) -> str:
    """Short stable hash of a JSON-serializable config dump."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]
