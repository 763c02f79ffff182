"""Two-action loss model for the divert/accept decision.

Diverting costs ``divert_cost`` whatever the sample holds; accepting costs
``error_cost`` only when the true contamination exceeds ``c_hat``. The
expected-loss minimizer therefore diverts exactly when

    P(c > c_hat | I) > divert_cost / error_cost

and accepts on ties.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ArgumentError


class Action(str, enum.Enum):
    DIVERT = "divert"
    ACCEPT = "accept"


@dataclass(frozen=True)
class Policy:
    """Rejection threshold (log units) and the two loss-matrix costs."""

    c_hat: float
    divert_cost: float
    error_cost: float

    def __post_init__(self):
        if not math.isfinite(self.c_hat):
            raise ArgumentError("c_hat must be finite")
        if not self.divert_cost >= 0:
            raise ArgumentError("divert_cost must be >= 0")
        if not self.error_cost > 0:
            raise ArgumentError("error_cost must be > 0")

    @property
    def threshold(self) -> float:
        return self.divert_cost / self.error_cost

    def scaled(self, factor: float) -> "Policy":
        return Policy(self.c_hat, self.divert_cost * factor, self.error_cost * factor)

    def to_dict(self) -> dict:
        return {"c_hat": self.c_hat, "divert_cost": self.divert_cost, "error_cost": self.error_cost}

    @classmethod
    def from_dict(cls, doc: dict) -> "Policy":
        try:
            return cls(float(doc["c_hat"]), float(doc["divert_cost"]), float(doc["error_cost"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ArgumentError(f"bad policy: {exc}") from None


def survival(z) -> np.ndarray:
    """Standard normal upper tail P(Z > z); erfc based, so the relative
    error stays small far into the tail."""
    return ndtr(-np.asarray(z, dtype=float))


def tail_prob(m, c_hat: float) -> float:
    """P(c > c_hat) under a univariate Gaussian mixture."""
    z = (c_hat - m.means) / np.sqrt(m.variances)
    p = float(m.weights @ survival(z))
    return min(1.0, max(0.0, p))


def expected_loss(action: Action, m, policy: Policy) -> float:
    if Action(action) is Action.DIVERT:
        return policy.divert_cost
    return policy.error_cost * tail_prob(m, policy.c_hat)


def decide(m, policy: Policy) -> Action:
    if tail_prob(m, policy.c_hat) > policy.threshold:
        return Action.DIVERT
    return Action.ACCEPT
