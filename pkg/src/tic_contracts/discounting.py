"""Discount curves and their instantaneous rates.

Three parametric families are supported:

* exponential        f(t) = exp(-gamma * t)
* hyperbolic         f(t) = (1 + alpha * t) ** (-gamma / alpha)
* quasi-hyperbolic   f(t) = (1 - beta) * exp(-t * (lam + gamma)) + beta * exp(-gamma * t)

All three satisfy f(0) = 1 and f > 0, and each comes with a closed-form
derivative and instantaneous discount rate idr(t) = -f'(t) / f(t).  The
exponential family has constant idr; the other two do not, which is what
makes an agent discounting with them time-inconsistent.

The public evaluators reject negative times.  Generator code that needs
f(r - s) for r < s goes through :meth:`DiscountSpec.value_extended`, which
accepts any argument for which the closed form is defined (for the
hyperbolic family that means 1 + alpha * t > 0).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

VARIANTS = ("exponential", "hyperbolic", "quasi_hyperbolic")


@dataclass(frozen=True)
class DiscountSpec:
    """Immutable description of one discount curve.

    Use the factory classmethods rather than the bare constructor; they
    fill in the fields that a variant does not use.
    """

    variant: str
    gamma: float
    alpha: float = 0.0
    beta: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown discount variant {self.variant!r}")
        if self.gamma < 0.0 or not math.isfinite(self.gamma):
            raise ValueError("gamma must be nonnegative and finite")
        if self.variant == "hyperbolic":
            if self.alpha < 0.0 or not math.isfinite(self.alpha):
                raise ValueError("alpha must be nonnegative and finite")
        if self.variant == "quasi_hyperbolic":
            if not (0.0 <= self.beta <= 1.0):
                raise ValueError("beta must lie in [0, 1]")
            if self.lam < 0.0 or not math.isfinite(self.lam):
                raise ValueError("lambda must be nonnegative and finite")

    @classmethod
    def exponential(cls, gamma: float) -> "DiscountSpec":
        return cls("exponential", float(gamma))

    @classmethod
    def hyperbolic(cls, gamma: float, alpha: float) -> "DiscountSpec":
        return cls("hyperbolic", float(gamma), alpha=float(alpha))

    @classmethod
    def quasi_hyperbolic(cls, gamma: float, beta: float, lam: float) -> "DiscountSpec":
        return cls("quasi_hyperbolic", float(gamma), beta=float(beta), lam=float(lam))

    # -- evaluation ------------------------------------------------------

    def value(self, t):
        """f(t) for t >= 0 (scalar or array)."""
        t = _check_nonnegative(t)
        return self._value_raw(t)

    def derivative(self, t):
        """Closed-form f'(t) for t >= 0."""
        t = _check_nonnegative(t)
        g = self.gamma
        if self.variant == "exponential":
            return -g * np.exp(-g * t)
        if self.variant == "hyperbolic":
            a = self.alpha
            if a == 0.0:
                return -g * np.exp(-g * t)
            # f' = -gamma * (1 + alpha t)^(-gamma/alpha - 1)
            return -g * self._value_raw(t) / (1.0 + a * t)
        b, lam = self.beta, self.lam
        return -(lam + g) * (1.0 - b) * np.exp(-t * (lam + g)) - g * b * np.exp(-g * t)

    def idr(self, t):
        """Instantaneous discount rate -f'(t)/f(t), from its own closed form.

        Computed from the per-variant formula rather than as a quotient of
        value() and derivative(), so it stays stable for large t where both
        f and f' underflow.
        """
        t = _check_nonnegative(t)
        g = self.gamma
        if self.variant == "exponential":
            return np.broadcast_to(np.float64(g), np.shape(t)).copy() if np.ndim(t) else g
        if self.variant == "hyperbolic":
            a = self.alpha
            return g / (1.0 + a * t) if a != 0.0 else (
                np.broadcast_to(np.float64(g), np.shape(t)).copy() if np.ndim(t) else g
            )
        b, lam = self.beta, self.lam
        if b == 0.0:
            extra = np.broadcast_to(np.float64(lam), np.shape(t)).copy() if np.ndim(t) else lam
        elif b == 1.0:
            extra = np.zeros(np.shape(t)) if np.ndim(t) else 0.0
        else:
            # lam (1-b) / ((1-b) + b e^{t lam}), rearranged with e^{-t lam}
            # so the denominator never overflows.
            decay = np.exp(-lam * np.asarray(t, dtype=float)) if np.ndim(t) else math.exp(-lam * t)
            extra = lam * (1.0 - b) * decay / ((1.0 - b) * decay + b)
        return g + extra

    def value_extended(self, t):
        """f(t) for possibly negative t, used by Volterra generators.

        The exponential and quasi-hyperbolic forms extend to all reals; the
        hyperbolic form requires 1 + alpha * t > 0 and raises otherwise.
        """
        t = np.asarray(t, dtype=float)
        if self.variant == "hyperbolic" and self.alpha > 0.0:
            if np.any(1.0 + self.alpha * t <= 0.0):
                raise ValueError(
                    "hyperbolic discount undefined at 1 + alpha*t <= 0; "
                    "shrink the horizon or alpha"
                )
        out = self._value_raw(t)
        return float(out) if out.ndim == 0 else out

    def _value_raw(self, t):
        t = np.asarray(t, dtype=float)
        g = self.gamma
        if self.variant == "exponential":
            return np.exp(-g * t)
        if self.variant == "hyperbolic":
            a = self.alpha
            if a == 0.0:
                return np.exp(-g * t)
            return np.exp((-g / a) * np.log1p(a * t))
        b, lam = self.beta, self.lam
        return (1.0 - b) * np.exp(-t * (lam + g)) + b * np.exp(-g * t)

    # -- serialization ---------------------------------------------------

    def to_json(self) -> dict:
        out = {"variant": self.variant, "gamma": self.gamma}
        if self.variant == "hyperbolic":
            out["alpha"] = self.alpha
        if self.variant == "quasi_hyperbolic":
            out["beta"] = self.beta
            out["lambda"] = self.lam
        return out

    @classmethod
    def from_json(cls, obj) -> "DiscountSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        variant = obj["variant"]
        gamma = obj["gamma"]
        if variant == "exponential":
            return cls.exponential(gamma)
        if variant == "hyperbolic":
            return cls.hyperbolic(gamma, obj["alpha"])
        if variant == "quasi_hyperbolic":
            return cls.quasi_hyperbolic(gamma, obj["beta"], obj["lambda"])
        raise ValueError(f"unknown discount variant {variant!r}")


def _check_nonnegative(t):
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0.0):
        raise ValueError("discount functions are defined for t >= 0 only")
    if arr.ndim == 0:
        return float(arr)
    return arr
