"""Command-line front end.

Subcommands: discount, solve, verify, figures, check-constraint.  Input
is a JSON config file; output is JSON reports and CSV curve tables meant
for external plotting.  Exit codes: 0 success, 1 usage or parse error,
2 model infeasibility or validation failure, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import closed_form, dynamics, fsvie
from .discounting import DiscountSpec
from .model import InfeasibleError, MarketModel, Preferences, UnboundedLoadingError, validate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_VERIFY = 3

FIGURE_HORIZON = 50.0
FIGURE1_SPECS = (
    ("exponential", DiscountSpec.exponential(0.0576)),
    ("hyperbolic", DiscountSpec.hyperbolic(1.0, 4.0)),
    ("quasi_hyperbolic", DiscountSpec.quasi_hyperbolic(0.0387, 0.7, 2.197)),
)
FIGURE2_GAMMA = 0.0575
FIGURE2_ALPHAS = (4.0, 0.4, 0.04, 0.004)
FIGURE2_BETAS = (0.1, 0.19, 0.343, 0.569)
FIGURE2_LAMBDA = 0.439
FIGURE2_BETA_RIGHT = 0.3
FIGURE2_LAMBDAS = (0.439, 0.1927, 0.0371, 0.0013)


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; remap to the usage code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _fail_usage(message: str):
    sys.stderr.write(f"error: {message}\n")
    raise SystemExit(EXIT_USAGE)


def _fail_infeasible(problems):
    if isinstance(problems, str):
        problems = [problems]
    sys.stderr.write(json.dumps({"error": "; ".join(problems), "problems": list(problems)},
                                sort_keys=True) + "\n")
    raise SystemExit(EXIT_INFEASIBLE)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _ensure_outdir(path):
    path = path or "."
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        _fail_usage(f"cannot create output directory: {exc}")
    if not os.access(path, os.W_OK):
        _fail_usage(f"output directory not writable: {path}")
    return path


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_plain(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, columns):
    rows = zip(*columns)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _fail_usage(f"cannot read config: {exc}")
    if not isinstance(cfg, dict):
        _fail_usage("config must be a JSON object")
    return cfg


def _build_problem(cfg):
    if "model" not in cfg or "preferences" not in cfg:
        _fail_usage("config needs 'model' and 'preferences' sections")
    try:
        model = MarketModel.from_json(cfg["model"])
        prefs = Preferences.from_json(cfg["preferences"])
    except (KeyError, TypeError, ValueError) as exc:
        _fail_usage(f"bad config: {exc}")
    problems = validate(model, prefs)
    if problems:
        _fail_infeasible(problems)
    return model, prefs


def _positive_int(cfg, args, flag_name, cfg_key, default):
    value = getattr(args, flag_name, None) if flag_name else None
    if value is None:
        value = cfg.get(cfg_key, default)
    try:
        value = int(value)
    except (TypeError, ValueError):
        _fail_usage(f"{cfg_key} must be an integer")
    if value <= 0:
        _fail_usage(f"{cfg_key} must be positive")
    return value


def cmd_discount(args) -> int:
    cfg = _load_config(args.config)
    horizon = float(cfg.get("horizon", FIGURE_HORIZON))
    if horizon <= 0.0:
        _fail_usage("horizon must be positive")
    points = _positive_int(cfg, args, "steps", "points", 501)
    if points < 2:
        _fail_usage("points must be at least 2")
    entries = cfg.get("discounts")
    if entries is None:
        named = list(FIGURE1_SPECS)
    else:
        named = []
        for entry in entries:
            try:
                spec = DiscountSpec.from_json(entry)
            except (KeyError, TypeError, ValueError) as exc:
                _fail_usage(f"bad discount entry: {exc}")
            named.append((str(entry.get("name", spec.variant)), spec))
    outdir = _ensure_outdir(args.out)
    t = np.linspace(0.0, horizon, points)
    written = []
    for name, spec in named:
        path = os.path.join(outdir, f"discount_{name}.csv")
        _write_csv(path, ["t", "f", "idr"], [t, spec.value(t), spec.idr(t)])
        written.append(path)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _load_config(args.config)
    model, prefs = _build_problem(cfg)
    n_grid = _positive_int(cfg, args, "steps", "grid_points", closed_form.DEFAULT_GRID_POINTS)
    if n_grid < 3:
        _fail_usage("grid_points must be at least 3")
    grid = closed_form.default_grid(model.horizon, n_grid)
    try:
        sol = closed_form.solve(model, prefs, grid)
    except (InfeasibleError, UnboundedLoadingError) as exc:
        _fail_infeasible(str(exc))
    outdir = _ensure_outdir(args.out)
    sol_path = os.path.join(outdir, "solution.json")
    csv_path = os.path.join(outdir, "curves.csv")
    _write_json(sol_path, sol.to_json())
    _write_csv(csv_path, ["t", "z_star", "loading", "effort"],
               [sol.grid, sol.z_star, sol.loading_values, sol.effort_values])
    print(sol_path)
    print(csv_path)
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load_config(args.config)
    model, prefs = _build_problem(cfg)
    n_grid = _positive_int(cfg, args, None, "grid_points", closed_form.DEFAULT_GRID_POINTS)
    n_paths = _positive_int(cfg, args, "paths", "n_paths", 100_000)
    n_steps = _positive_int(cfg, args, "steps", "n_steps", 2000)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 7))
    grid = closed_form.default_grid(model.horizon, n_grid)
    try:
        sol = closed_form.solve(model, prefs, grid)
    except (InfeasibleError, UnboundedLoadingError) as exc:
        _fail_infeasible(str(exc))
    perturb = float(cfg.get("perturb_constant_term", 0.0))
    if perturb:
        sol = sol.shifted(perturb)
    report = dynamics.verify_contract(
        model, prefs, sol, n_paths=n_paths, n_steps=n_steps, seed=seed,
        antithetic=bool(cfg.get("antithetic", False)), threads=args.threads)
    report = _plain(report)
    outdir = _ensure_outdir(args.out)
    path = os.path.join(outdir, "report.json")
    _write_json(path, report)

    def verdict(ok):
        return "pass" if ok else "FAIL"

    p = report["participation"]
    print(f"participation: {verdict(p['pass'])} "
          f"(mean={p['mean']:.6g}, target={p['target']:.6g}, se={p['se']:.3g})")
    v = report["principal_value"]
    print(f"principal_value: {verdict(v['pass'])} "
          f"(mean={v['mean']:.6g}, target={v['target']:.6g}, se={v['se']:.3g})")
    for row in report["delta_residuals"]:
        print(f"correction_identity s={row['s']:g}: {verdict(row['pass'])} "
              f"(mean={row['mean']:.3g}, allowance={row['allowance']:.3g})")
    for row in report["spike_tests"]:
        print(f"spike t={row['t']:g} alt={row['alt']}: {verdict(row['pass'])} "
              f"(gain={row['gain']:.3g}, bound={row['bound']:.3g})")
    print(f"overall: {verdict(report['pass'])}")
    return EXIT_OK if report["pass"] else EXIT_VERIFY


def _panel_rows(specs, horizon, points):
    """f, idr and equilibrium effort columns for one panel."""
    t = np.linspace(0.0, horizon, points)
    header = ["t"]
    columns = [t]
    for label, spec in specs:
        model = MarketModel.quadratic(0.0, horizon, 1.0, action=(0.0, 10.0))
        prefs = Preferences(
            agent_utility="risk_neutral", principal_utility="risk_neutral",
            gamma_a=0.0, gamma_p=0.0, r0=0.0, discount=spec,
            spec_tag="separable_rn")
        sol = closed_form.solve(model, prefs, closed_form.default_grid(horizon, points))
        header += [f"f_{label}", f"idr_{label}", f"effort_{label}"]
        columns += [np.asarray(spec.value(t)), np.asarray(spec.idr(t)),
                    np.asarray(sol.effort(t))]
    return header, columns


def cmd_figures(args) -> int:
    cfg = _load_config(args.config)
    horizon = float(cfg.get("horizon", FIGURE_HORIZON))
    if horizon <= 0.0:
        _fail_usage("horizon must be positive")
    points = _positive_int(cfg, args, "steps", "points", 501)
    gamma = float(cfg.get("gamma", FIGURE2_GAMMA))
    alphas = tuple(cfg.get("alphas", FIGURE2_ALPHAS))
    betas = tuple(cfg.get("betas", FIGURE2_BETAS))
    lam_center = float(cfg.get("lambda", FIGURE2_LAMBDA))
    beta_right = float(cfg.get("beta", FIGURE2_BETA_RIGHT))
    lambdas = tuple(cfg.get("lambdas", FIGURE2_LAMBDAS))

    base = ("exp", DiscountSpec.exponential(gamma))
    panels = {
        "left": [base] + [(f"alpha_{a:g}", DiscountSpec.hyperbolic(gamma, a))
                          for a in alphas],
        "center": [base] + [(f"beta_{b:g}", DiscountSpec.quasi_hyperbolic(gamma, b, lam_center))
                            for b in betas],
        "right": [base] + [(f"lambda_{l:g}", DiscountSpec.quasi_hyperbolic(gamma, beta_right, l))
                           for l in lambdas],
    }
    outdir = _ensure_outdir(args.out)
    for panel, specs in panels.items():
        header, columns = _panel_rows(specs, horizon, points)
        path = os.path.join(outdir, f"effort_{panel}.csv")
        _write_csv(path, header, columns)
        print(path)
    return EXIT_OK


def cmd_check_constraint(args) -> int:
    cfg = _load_config(args.config)
    model, prefs = _build_problem(cfg)
    if prefs.spec_tag != "separable_rn":
        _fail_usage("check-constraint covers the separable risk-neutral spec")
    n_grid = _positive_int(cfg, args, None, "grid_points", closed_form.DEFAULT_GRID_POINTS)
    n_paths = _positive_int(cfg, args, "paths", "n_paths", 3)
    n_steps = _positive_int(cfg, args, "steps", "n_steps", 2000)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 7))
    threshold = args.tol if args.tol is not None else float(cfg.get("threshold", 0.01))
    if threshold <= 0.0:
        _fail_usage("threshold must be positive")
    family_name = str(cfg.get("family", "optimal"))
    try:
        sol = closed_form.solve(model, prefs, closed_form.default_grid(model.horizon, n_grid))
    except (InfeasibleError, UnboundedLoadingError) as exc:
        _fail_infeasible(str(exc))
    if family_name == "optimal":
        y0_family, z_family = fsvie.separable_optimal_family(model, prefs, sol)
    elif family_name == "s_constant":
        y0_family, z_family = fsvie.s_constant_family(model, prefs, sol)
    else:
        _fail_usage(f"unknown family {family_name!r}")
    ensemble = dynamics.simulate(model, sol.effort, n_paths, n_steps, seed,
                                 threads=args.threads)
    try:
        field, diffs = fsvie.picard_solve(model, prefs, y0_family, z_family, ensemble,
                                          tol=float(cfg.get("picard_tol", 1e-10)))
    except fsvie.ConvergenceError as exc:
        sys.stderr.write(json.dumps({"error": str(exc)}, sort_keys=True) + "\n")
        return EXIT_VERIFY
    residuals = fsvie.target_constraint_residual(field, prefs)
    worst = float(np.max(residuals))
    ok = worst < threshold
    report = {
        "family": family_name, "residual": worst,
        "per_path": [float(r) for r in residuals],
        "picard_sweeps": [len(d) for d in diffs],
        "threshold": threshold, "pass": ok,
    }
    if args.out:
        _write_json(os.path.join(_ensure_outdir(args.out), "constraint.json"), report)
    print(f"target constraint residual {worst:.3e} "
          f"(threshold {threshold:g}): {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


def _build_parser() -> _Parser:
    parser = _Parser(prog="tic-contracts",
                     description="Optimal contracts under non-exponential discounting")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory (default: current)")
        p.add_argument("--seed", type=int, help="stream seed")
        p.add_argument("--paths", type=int, dest="paths", help="Monte Carlo paths")
        p.add_argument("--steps", type=int, dest="steps", help="time steps / table points")
        p.add_argument("--threads", type=int, help="worker cap (default: env or 1)")
        p.add_argument("--tol", type=float, help="pass threshold where applicable")

    for name, fn, blurb in (
            ("discount", cmd_discount, "tabulate discount curves and their rates"),
            ("solve", cmd_solve, "solve a contracting problem in closed form"),
            ("verify", cmd_verify, "Monte Carlo verification of a solved contract"),
            ("figures", cmd_figures, "effort/discount tables behind the headline figures"),
            ("check-constraint", cmd_check_constraint,
             "Volterra target-constraint residual of a contract family")):
        p = sub.add_parser(name, help=blurb)
        common(p)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        code = exc.code
        if code is None:
            return EXIT_OK
        return code if isinstance(code, int) else EXIT_USAGE
    except (InfeasibleError, UnboundedLoadingError) as exc:
        sys.stderr.write(json.dumps({"error": str(exc)}, sort_keys=True) + "\n")
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
