"""Contract solvers for the five supported regimes.

Every solver reduces to a family of pointwise scalar maximizations plus
quadrature.  The agent-side action maximization is delegated to
:mod:`tic_contracts.hamiltonian`; the outer exposure search (over z, which
ranges over all reals) runs a golden-section refinement inside a bracket
that doubles outward from [-1, 1] until the maximum is interior, with a
hard cap that flags runaway models instead of silently clamping.

Values are integrated with composite Simpson on the solution grid; the
default grid has 2001 points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import simpson

from .discounting import DiscountSpec
from .hamiltonian import maximize, search_max, stars_on_grid
from .model import MarketModel, Preferences, UnboundedLoadingError, InfeasibleError, validate

DEFAULT_GRID_POINTS = 2001
Z_CAP = 1e3


@dataclass(frozen=True)
class CurveTable:
    """A sampled curve with linear interpolation between nodes."""

    grid: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape:
            raise ValueError("grid and values must be 1-D arrays of equal length")
        if np.any(np.diff(grid) <= 0.0):
            raise ValueError("grid must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("curve values must be finite")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        return np.interp(t, self.grid, self.values)


def default_grid(horizon: float, n: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    return np.linspace(0.0, float(horizon), n)


def _simpson(values, grid) -> float:
    return float(simpson(values, x=grid))


def _solution_grid(model: MarketModel, grid) -> np.ndarray:
    if grid is None:
        return default_grid(model.horizon)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3:
        raise ValueError("grid must be a 1-D array with at least 3 points")
    if np.any(np.diff(grid) <= 0.0):
        raise ValueError("grid must be strictly increasing")
    if abs(grid[0]) > 1e-12 or abs(grid[-1] - model.horizon) > 1e-12:
        raise ValueError("grid must start at 0 and end at the horizon")
    return grid


def _require(model: MarketModel, prefs: Preferences, tag: str):
    if prefs.spec_tag != tag:
        raise ValueError(f"solver expects spec {tag!r}, got {prefs.spec_tag!r}")
    problems = validate(model, prefs)
    if problems:
        raise ValueError("; ".join(problems))


def z_argmax(objective, center: float = 0.0, cap: float = Z_CAP, tol: float = 1e-10,
             radius: float = 1.0):
    """Maximize a scalar objective over all reals.

    objective must accept a numpy array of candidate exposures and return
    an array of values.  The scan starts on [center - radius, center + radius]
    and doubles outward only while an edge strictly dominates every interior
    sample; an edge that merely ties the interior is a plateau (clamped
    action), not growth.  Callers tracking a slowly moving maximizer should
    pass the previous argmax as center with a radius on its scale, so that
    sharply scaled objectives stay resolved by the 64-point scan.

    Returns (argmax, value).
    """
    if not radius > 0.0:
        raise ValueError("radius must be positive")
    lo, hi = center - radius, center + radius

    def scan(a, b):
        xs = np.linspace(a, b, 64)
        vals = np.asarray(objective(xs), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("exposure objective produced non-finite values")
        return xs, vals

    while True:
        xs, vals = scan(lo, hi)
        best = int(np.argmax(vals))
        interior = 1 + int(np.argmax(vals[1:-1]))
        margin = 1e-12 * (1.0 + abs(float(vals[interior])))
        if best in (0, 63) and float(vals[best]) > float(vals[interior]) + margin:
            width = hi - lo
            if best == 0:
                lo -= width
            else:
                hi += width
            if max(abs(lo), abs(hi)) > cap:
                raise UnboundedLoadingError(
                    f"unbounded loading: exposure search escaped |z| <= {cap:g}"
                )
            continue
        if best in (0, 63):
            best = interior
        # zoom once into the bracketing cell pair before scalar refinement
        xs2, vals2 = scan(xs[best - 1], xs[best + 1])
        b2 = int(np.argmax(vals2))
        a2 = xs2[max(b2 - 1, 0)]
        c2 = xs2[min(b2 + 1, 63)]

        def scalar(z):
            return float(objective(np.asarray([z]))[0])

        return search_max(scalar, a2, c2, tol=tol, coarse=8)


@dataclass
class ContractSolution:
    """Solved contract: constant part, loading curve, effort curve, values.

    The contract pays constant_term + integral of loading(t) dX_t at the
    horizon.  constant_term = constant_reservation + constant_adjustment,
    splitting the reservation-level part from the cost/drift integral part.
    """

    spec_tag: str
    y0: float
    constant_term: float
    constant_reservation: float
    constant_adjustment: float
    value_principal: float
    value_agent: float
    grid: np.ndarray
    z_star: np.ndarray
    loading_values: np.ndarray
    effort_values: np.ndarray
    label: str = ""

    def loading(self, t):
        return np.interp(t, self.grid, self.loading_values)

    def effort(self, t):
        return np.interp(t, self.grid, self.effort_values)

    def shifted(self, delta: float) -> "ContractSolution":
        """Copy with the constant payment moved by delta (a broken contract
        on purpose; the participation check should flag it)."""
        return replace(self, constant_term=self.constant_term + float(delta))

    def to_json(self) -> dict:
        return {
            "spec": self.spec_tag,
            "y0": self.y0,
            "constant_term": self.constant_term,
            "constant_reservation": self.constant_reservation,
            "constant_adjustment": self.constant_adjustment,
            "value_principal": self.value_principal,
            "value_agent": self.value_agent,
            "z_star": {"grid": self.grid.tolist(), "values": self.z_star.tolist()},
            "loading": {"grid": self.grid.tolist(), "values": self.loading_values.tolist()},
            "effort": {"grid": self.grid.tolist(), "values": self.effort_values.tolist()},
            "label": self.label,
        }


def _stars_curves(model: MarketModel, grid, z_star):
    lam = np.empty_like(z_star)
    cost = np.empty_like(z_star)
    eff = np.empty_like(z_star)
    for i, t in enumerate(grid):
        l, c, a = stars_on_grid(model, float(t), z_star[i:i + 1])
        lam[i], cost[i], eff[i] = l[0], c[0], a[0]
    return lam, cost, eff


def _sigma_curve(model: MarketModel, grid):
    return np.asarray([model.sigma_at(float(t)) for t in grid], dtype=float)


def _time_free(model: MarketModel) -> bool:
    # Builtin families carry no explicit time dependence, so with constant
    # sigma the exposure objective is the same at every t.
    return (
        model.sigma_const is not None
        and model.drift_family is not None
        and model.cost_family is not None
    )


def solve_second_best_discounted_utility(model: MarketModel, prefs: Preferences,
                                         grid=None) -> ContractSolution:
    """Exponential-utility agent with discounted terminal utility.

    The exposure trade-off does not involve the discount curve, which is
    why the principal's value factorizes into an f(T) power times an
    f-independent exponential of the integrated trade-off.
    """
    _require(model, prefs, "discounted_utility")
    grid = _solution_grid(model, grid)
    ga, gp = prefs.gamma_a, prefs.gamma_p
    f = prefs.discount
    T = model.horizon
    fT = float(f.value(T))

    def objective_at(t, sig):
        def obj(zs):
            lam, cost, _ = stars_on_grid(model, t, zs)
            return (lam - cost
                    - 0.5 * ga * sig * sig * zs * zs
                    - 0.5 * gp * sig * sig * (1.0 - zs) ** 2)
        return obj

    z_star = np.empty_like(grid)
    if _time_free(model):
        z0, _ = z_argmax(objective_at(0.0, float(model.sigma_at(0.0))))
        z_star.fill(z0)
    else:
        prev, rad = 0.0, 1.0
        for i in range(grid.size - 1, -1, -1):
            t = float(grid[i])
            prev, _ = z_argmax(objective_at(t, float(model.sigma_at(t))),
                               center=prev, radius=rad)
            z_star[i] = prev
            rad = max(0.75 * abs(prev), 1e-3)

    lam, cost, eff = _stars_curves(model, grid, z_star)
    sig = _sigma_curve(model, grid)
    trade = lam - cost - 0.5 * ga * sig ** 2 * z_star ** 2 \
        - 0.5 * gp * sig ** 2 * (1.0 - z_star) ** 2
    ham = lam * z_star - cost

    r0_hat = prefs.agent_u_inv(prefs.r0)
    y0_hat = r0_hat + math.log(fT) / ga
    const_adj = -_simpson(ham - 0.5 * ga * sig ** 2 * z_star ** 2, grid)
    integral = _simpson(trade, grid)
    if gp > 0.0:
        value_p = -(1.0 / gp) * math.exp(-gp * (model.x0 - y0_hat)) * math.exp(-gp * integral)
    else:
        value_p = model.x0 - y0_hat + integral

    return ContractSolution(
        spec_tag=prefs.spec_tag,
        y0=prefs.r0,
        constant_term=y0_hat + const_adj,
        constant_reservation=y0_hat,
        constant_adjustment=const_adj,
        value_principal=value_p,
        value_agent=prefs.r0,
        grid=grid,
        z_star=z_star,
        loading_values=z_star.copy(),
        effort_values=eff,
    )


def solve_second_best_separable_rn(model: MarketModel, prefs: Preferences,
                                   grid=None) -> ContractSolution:
    """Risk-neutral agent and principal with discounted separable cost."""
    _require(model, prefs, "separable_rn")
    grid = _solution_grid(model, grid)
    f = prefs.discount
    T = model.horizon
    fT = float(f.value(T))
    f_t = np.asarray(f.value(grid), dtype=float)
    f_Tt = np.asarray(f.value(T - grid), dtype=float)

    # walk the grid from the horizon down: z*(T) sits at the unit scale for
    # any curve, and each step inherits the previous point's scale, so the
    # scan resolves the narrow maxima that long horizons produce
    z_star = np.empty_like(grid)
    prev, rad = 0.0, 1.0
    for i in range(grid.size - 1, -1, -1):
        w = f_t[i] / fT

        def obj(zs, t=float(grid[i]), w=w):
            lam, cost, _ = stars_on_grid(model, t, zs)
            return lam - w * cost

        prev, _ = z_argmax(obj, center=prev, radius=rad)
        z_star[i] = prev
        rad = max(0.75 * abs(prev), 1e-3)

    lam, cost, eff = _stars_curves(model, grid, z_star)
    loading = z_star / f_Tt
    gain = lam - (f_t / fT) * cost
    value_p = model.x0 - prefs.r0 / fT + _simpson(gain, grid)
    const_adj = -_simpson(loading * lam - f_t * cost / fT, grid)

    return ContractSolution(
        spec_tag=prefs.spec_tag,
        y0=prefs.r0,
        constant_term=prefs.r0 / fT + const_adj,
        constant_reservation=prefs.r0 / fT,
        constant_adjustment=const_adj,
        value_principal=value_p,
        value_agent=prefs.r0,
        grid=grid,
        z_star=z_star,
        loading_values=loading,
        effort_values=eff,
    )


def solve_second_best_discounted_income(model: MarketModel, prefs: Preferences,
                                        grid=None) -> ContractSolution:
    """Exponential-utility agent with the cost discounted inside the utility.

    Risk-neutral entries are the vanishing-risk-aversion limits; at
    gamma_a = gamma_p = 0 the output agrees with the separable solver with
    the same curve.
    """
    _require(model, prefs, "discounted_income")
    grid = _solution_grid(model, grid)
    g = prefs.discount
    ga, gp = prefs.gamma_a, prefs.gamma_p
    T = model.horizon
    gT = float(g.value(T))
    g_t = np.asarray(g.value(grid), dtype=float)
    g_Tt = np.asarray(g.value(T - grid), dtype=float)

    z_star = np.empty_like(grid)
    prev, rad = 0.0, 1.0
    for i in range(grid.size - 1, -1, -1):
        t = float(grid[i])
        sig = float(model.sigma_at(t))
        wc = g_t[i] / gT
        wa = 0.5 * ga * gT / (g_Tt[i] ** 2)
        gTt = g_Tt[i]

        def obj(zs, t=t, sig=sig, wc=wc, wa=wa, gTt=gTt):
            lam, cost, _ = stars_on_grid(model, t, zs)
            return (lam - wc * cost - wa * sig * sig * zs * zs
                    - 0.5 * gp * sig * sig * (1.0 - zs / gTt) ** 2)

        prev, _ = z_argmax(obj, center=prev, radius=rad)
        z_star[i] = prev
        rad = max(0.75 * abs(prev), 1e-3)

    lam, cost, eff = _stars_curves(model, grid, z_star)
    sig = _sigma_curve(model, grid)
    loading = z_star / g_Tt
    z0 = gT * loading
    big_g = (lam - (g_t / gT) * cost
             - 0.5 * ga * gT * sig ** 2 * z_star ** 2 / g_Tt ** 2
             - 0.5 * gp * sig ** 2 * (1.0 - z_star / g_Tt) ** 2)

    r0_hat = prefs.agent_u_inv(prefs.r0) if prefs.agent_utility == "exponential" else prefs.r0
    const_adj = -_simpson(lam * z0 - g_t * cost - 0.5 * ga * sig ** 2 * z0 ** 2, grid) / gT
    integral = _simpson(big_g, grid)
    if gp > 0.0:
        value_p = -(1.0 / gp) * math.exp(-gp * (model.x0 - r0_hat / gT)) \
            * math.exp(-gp * integral)
    else:
        value_p = model.x0 - r0_hat / gT + integral

    return ContractSolution(
        spec_tag=prefs.spec_tag,
        y0=prefs.r0,
        constant_term=r0_hat / gT + const_adj,
        constant_reservation=r0_hat / gT,
        constant_adjustment=const_adj,
        value_principal=value_p,
        value_agent=prefs.r0,
        grid=grid,
        z_star=z_star,
        loading_values=loading,
        effort_values=eff,
    )


def solve_first_best_separable_rn(model: MarketModel, prefs: Preferences,
                                  grid=None) -> ContractSolution:
    """Risk-sharing benchmark for the separable risk-neutral regime.

    The principal dictates effort and pays a deterministic amount, so the
    loading is identically zero.  The pointwise maximand carries the
    1/f(T) weight on the cost that the binding participation constraint
    induces, which is what makes this value coincide with the second-best
    one.
    """
    _require(model, prefs, "first_best_separable")
    grid = _solution_grid(model, grid)
    f = prefs.discount
    T = model.horizon
    fT = float(f.value(T))
    f_t = np.asarray(f.value(grid), dtype=float)

    eff = np.empty_like(grid)
    lam = np.empty_like(grid)
    cost = np.empty_like(grid)
    for i, t in enumerate(grid):
        w = f_t[i] / fT
        # argmax of sigma b - w c equals the agent maximizer at exposure 1/w
        res = maximize(model, float(t), 1.0 / w)
        eff[i] = res.argmax
        lam[i] = float(model.sigma_at(float(t)) * model.drift(float(t), res.argmax))
        cost[i] = float(model.cost(float(t), res.argmax))

    value_p = model.x0 - prefs.r0 / fT + _simpson(lam - f_t * cost / fT, grid)
    const_adj = _simpson(f_t * cost, grid) / fT

    return ContractSolution(
        spec_tag=prefs.spec_tag,
        y0=prefs.r0,
        constant_term=prefs.r0 / fT + const_adj,
        constant_reservation=prefs.r0 / fT,
        constant_adjustment=const_adj,
        value_principal=value_p,
        value_agent=prefs.r0,
        grid=grid,
        z_star=np.zeros_like(grid),
        loading_values=np.zeros_like(grid),
        effort_values=eff,
    )


def solve_first_best_nonseparable(model: MarketModel, prefs: Preferences,
                                  grid=None) -> ContractSolution:
    """Risk-sharing benchmark for two exponential utilities.

    The single discount curve plays both of its roles here: terminal
    factor at the horizon and running weight on the effort cost.  The
    contract is linear in terminal output with a constant loading.
    """
    _require(model, prefs, "first_best_nonseparable")
    grid = _solution_grid(model, grid)
    ga, gp = prefs.gamma_a, prefs.gamma_p
    curve = prefs.discount
    T = model.horizon
    gT = float(curve.value(T))
    g_t = np.asarray(curve.value(grid), dtype=float)
    gbar = ga * gp * gT / (ga * gT + gp)
    sig = _sigma_curve(model, grid)

    eff = np.empty_like(grid)
    lam = np.empty_like(grid)
    cost = np.empty_like(grid)
    for i, t in enumerate(grid):
        res = maximize(model, float(t), gT / g_t[i])
        eff[i] = res.argmax
        lam[i] = float(model.sigma_at(float(t)) * model.drift(float(t), res.argmax))
        cost[i] = float(model.cost(float(t), res.argmax))

    phi = lam - (g_t / gT) * cost - 0.5 * gbar * sig ** 2
    big_phi = model.x0 + _simpson(phi, grid)
    if prefs.r0 >= 0.0:
        raise InfeasibleError("infeasible: reservation utility must be negative")
    try:
        e_star = math.exp(-gbar * big_phi)
        base = gT * e_star / (-ga * prefs.r0)
        if not math.isfinite(base) or base <= 0.0:
            raise InfeasibleError(
                "infeasible: risk-sharing certainty equivalent diverged")
        expo = gp / (ga * gT)
        value_p = -(1.0 / gp) * base ** expo * e_star
    except OverflowError:
        raise InfeasibleError("infeasible: principal value diverged") from None
    if not math.isfinite(value_p):
        raise InfeasibleError("infeasible: principal value diverged")

    denom = gT * ga + gp
    loading_const = gp / denom
    k0 = _simpson(g_t * cost, grid)
    big_lam = _simpson(lam, grid)
    big_sig = _simpson(sig ** 2, grid)
    # binding participation under the dictated effort pins the constant:
    # the reservation part absorbs the terminal discount twice (outside
    # the utility and inside the income), the adjustment part undoes the
    # loading's share of drift and adds cost and risk compensation
    c0 = -math.log(-ga * prefs.r0) / ga
    const_res = (c0 + math.log(gT) / ga) / gT
    const_adj = (-loading_const * big_lam + k0 / gT
                 + 0.5 * ga * gT * loading_const ** 2 * big_sig)

    return ContractSolution(
        spec_tag=prefs.spec_tag,
        y0=prefs.r0,
        constant_term=const_res + const_adj,
        constant_reservation=const_res,
        constant_adjustment=const_adj,
        value_principal=value_p,
        value_agent=prefs.r0,
        grid=grid,
        z_star=np.full_like(grid, loading_const),
        loading_values=np.full_like(grid, loading_const),
        effort_values=eff,
    )


_SOLVERS = {
    "discounted_utility": solve_second_best_discounted_utility,
    "separable_rn": solve_second_best_separable_rn,
    "discounted_income": solve_second_best_discounted_income,
    "first_best_separable": solve_first_best_separable_rn,
    "first_best_nonseparable": solve_first_best_nonseparable,
}


def solve(model: MarketModel, prefs: Preferences, grid=None) -> ContractSolution:
    """Dispatch to the solver matching prefs.spec_tag."""
    return _SOLVERS[prefs.spec_tag](model, prefs, grid)


def effort_curve(solution: ContractSolution, grid=None) -> CurveTable:
    if grid is None:
        grid = solution.grid
    grid = np.asarray(grid, dtype=float)
    return CurveTable(grid, np.interp(grid, solution.grid, solution.effort_values),
                      label=f"effort:{solution.spec_tag}")


def idr_curve(spec: DiscountSpec, grid) -> CurveTable:
    grid = np.asarray(grid, dtype=float)
    return CurveTable(grid, np.asarray(spec.idr(grid), dtype=float),
                      label=f"idr:{spec.variant}")
