"""Pointwise maximization of the agent's effort trade-off.

For a volatility exposure z at time t the agent picks the action maximizing
sigma(t) * b(t, a) * z - cost(t, a) over the compact action interval.  For
the builtin drift/cost families the stationary point is explicit and only
needs clamping; anything custom goes through a coarse scan plus
golden-section refinement with a parabolic polish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import MarketModel

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0

ACTION_TOL = 1e-10


@dataclass(frozen=True)
class HamiltonianResult:
    value: float
    argmax: float
    at_boundary: bool


def search_max(fn, lo, hi, tol=ACTION_TOL, coarse=64):
    """Maximize fn on [lo, hi]; ties resolve to the smaller argument.

    Coarse scan locates the best cell, golden-section shrinks it to tol,
    then two centered parabolic steps polish the point below the flat-top
    noise floor of the direct comparisons.
    """
    lo = float(lo)
    hi = float(hi)
    if hi <= lo:
        return lo, float(fn(lo))
    xs = np.linspace(lo, hi, coarse)
    vals = np.asarray([float(fn(x)) for x in xs])
    best = int(np.argmax(vals))
    a = xs[max(best - 1, 0)]
    b = xs[min(best + 1, coarse - 1)]

    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = float(fn(c))
    fd = float(fn(d))
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = float(fn(c))
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = float(fn(d))
    if fc >= fd:
        x_best, f_best = c, fc
    else:
        x_best, f_best = d, fd

    span = hi - lo
    for h in (1e-5 * max(span, 1.0), 1e-6 * max(span, 1.0)):
        xm, xp = x_best - h, x_best + h
        if xm < lo or xp > hi:
            continue
        vm, v0, vp = float(fn(xm)), float(fn(x_best)), float(fn(xp))
        denom = vm - 2.0 * v0 + vp
        # require curvature clearly above the rounding noise of the sum
        if not denom < -1e-12 * (abs(vm) + 2.0 * abs(v0) + abs(vp)):
            continue
        step = 0.5 * h * (vm - vp) / denom
        cand = min(max(x_best + step, xm), xp)
        fcand = float(fn(cand))
        # near the flat top the improvement is below rounding; the vertex of
        # a concave fit is still the better point, so accept any value tie
        if fcand >= f_best - 1e-12 * (1.0 + abs(f_best)):
            x_best, f_best = cand, fcand
    return x_best, f_best


def _linear_drift_coeff(model: MarketModel, t: float):
    """Slope m with sigma(t) b(t, a) = m a, if the drift family is builtin."""
    if model.drift_family == "hm_linear":
        return 1.0
    if model.drift_family in ("quadratic", "power"):
        return model.sigma_at(t)
    return None


def _closed_argmax(model: MarketModel, t: float, z: float):
    m = _linear_drift_coeff(model, t)
    if m is None or model.cost_family is None:
        return None
    s = m * z
    if model.cost_family == "hm_linear":
        a = s / model.cost_params["k"]
    elif model.cost_family == "quadratic":
        a = s
    elif model.cost_family == "power":
        p = model.cost_params["p"]
        a = math.copysign(abs(s) ** (1.0 / (p - 1.0)), s) if s != 0.0 else 0.0
    else:
        return None
    return min(max(a, model.action_lo), model.action_hi)


def maximize(model: MarketModel, t: float, z: float, spec_tag: str = "separable_rn",
             prefs=None) -> HamiltonianResult:
    """Best effort response and its value at exposure z.

    The trade-off has the same shape for every second-best regime (the
    diagonal cost weight is one); first-best tags have no agent
    Hamiltonian and are rejected.
    """
    if spec_tag in ("first_best_nonseparable", "first_best_separable"):
        raise ValueError(f"{spec_tag} has no agent-side maximization")
    if not np.isfinite(z):
        raise ValueError("exposure z must be finite")
    t = float(t)
    z = float(z)
    sig = model.sigma_at(t)

    def objective(a):
        return sig * model.drift(t, a) * z - model.cost(t, a)

    a_closed = _closed_argmax(model, t, z)
    if a_closed is not None:
        a_star = a_closed
        value = objective(a_star)
    else:
        a_star, value = search_max(objective, model.action_lo, model.action_hi)
    edge = max(1e-9, 1e-12 * (model.action_hi - model.action_lo))
    at_boundary = (a_star - model.action_lo) < edge or (model.action_hi - a_star) < edge
    return HamiltonianResult(value=float(value), argmax=float(a_star), at_boundary=at_boundary)


def lambda_star(model: MarketModel, t: float, z: float, spec_tag: str = "separable_rn") -> float:
    """Drift sigma * b at the maximizing action."""
    res = maximize(model, t, z, spec_tag)
    return float(model.sigma_at(t) * model.drift(t, res.argmax))


def cost_star(model: MarketModel, t: float, z: float, spec_tag: str = "separable_rn") -> float:
    """Effort cost at the maximizing action."""
    res = maximize(model, t, z, spec_tag)
    return float(model.cost(t, res.argmax))


def stars_at(model: MarketModel, t: float, z: float):
    """(lambda_star, cost_star, argmax) in one maximization."""
    res = maximize(model, t, z)
    lam = float(model.sigma_at(t) * model.drift(t, res.argmax))
    return lam, float(model.cost(t, res.argmax)), res.argmax


def stars_on_grid(model: MarketModel, t: float, z_values):
    """Vectorized stars_at over an array of exposures, closed forms only.

    Returns (lam, cost, argmax) arrays.  Falls back to a scalar loop when
    the model carries custom callables.
    """
    z_values = np.asarray(z_values, dtype=float)
    m = _linear_drift_coeff(model, t)
    if m is not None and model.cost_family in ("hm_linear", "quadratic", "power"):
        s = m * z_values
        if model.cost_family == "hm_linear":
            k = model.cost_params["k"]
            a = s / k
        elif model.cost_family == "quadratic":
            k = 1.0
            a = s
        else:
            p = model.cost_params["p"]
            a = np.sign(s) * np.abs(s) ** (1.0 / (p - 1.0))
        a = np.clip(a, model.action_lo, model.action_hi)
        lam = m * a
        if model.cost_family == "power":
            cost = np.abs(a) ** model.cost_params["p"] / model.cost_params["p"]
        else:
            cost = 0.5 * k * a * a
        return lam, cost, a
    lam = np.empty_like(z_values)
    cost = np.empty_like(z_values)
    arg = np.empty_like(z_values)
    for i, z in enumerate(z_values.ravel()):
        l, c, a = stars_at(model, t, float(z))
        lam.ravel()[i] = l
        cost.ravel()[i] = c
        arg.ravel()[i] = a
    return lam, cost, arg
