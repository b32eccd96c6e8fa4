"""``sdrobust`` command line.

Exit codes: 0 ok, 1 validation failure, 2 config error, 3 numerical
overflow, 4 nominal loop violates the stability hypothesis.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ScenarioConfig, build_system, initial_state, load_config, resolve_config
from .errors import ConfigError, InstabilityError, OracleDivergenceError, PreconditionError
from .heat import FDGrid, HeatSystemSpec, cosine_basis, fd_simulate
from .sampled_loop import closed_loop, simulate
from .stability import analyze, perturbation_gaps, spectral_radius, stability_radius, write_curve_csv
from .validation import DEFECTS, run_suites, truncation_table

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_OVERFLOW = 3
EXIT_HYPOTHESIS = 4

CURVE_POINTS = 16


def _print(*args):
    print(*args, flush=True)


def _err(msg):
    print(msg, file=_sys.stderr, flush=True)


class _Run:
    """Resolved config plus output helpers for one command."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.out = Path(cfg["output"]["directory"])
        self.formats = set(cfg["output"]["formats"])

    def json(self, name, payload):
        if "json" not in self.formats:
            return None
        self.out.mkdir(parents=True, exist_ok=True)
        body = {"config": self.cfg.as_dict(), **payload}
        path = self.out / name
        path.write_text(json.dumps(_plain(body), indent=2, sort_keys=True) + "\n")
        return path

    def csv_path(self, name):
        if "csv" not in self.formats:
            return None
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else resolve_config({})
    return cfg.with_overrides(args.truncation, args.seed, args.workers, args.out)


def cmd_simulate(args):
    run = _Run(_config(args))
    sys = build_system(run.cfg)
    a = run.cfg["analysis"]
    try:
        traj = simulate(sys, initial_state(run.cfg), a["periods"], a["substeps"])
    except InstabilityError as exc:
        path = run.csv_path("trajectory.csv")
        if path is not None and exc.trajectory is not None:
            exc.trajectory.to_csv(path)
        run.json("simulate_report.json", {"status": "overflow", "period": exc.period, "message": str(exc)})
        _err(f"overflow: {exc}")
        return EXIT_OVERFLOW
    try:
        report = analyze(sys, traj if traj.periods >= 12 else None)
    except ValueError:
        report = analyze(sys)
    path = run.csv_path("trajectory.csv")
    if path is not None:
        traj.to_csv(path)
    run.json("simulate_report.json", {"status": "ok", "report": report.as_dict()})
    _print(f"simulated {traj.periods} periods, final norm {traj.norms[-1]:.6e}, "
           f"spectral radius {report.spectral_radius:.6f}")
    return EXIT_OK


def cmd_analyze(args):
    run = _Run(_config(args))
    sys = build_system(run.cfg)
    report = analyze(sys)
    payload = {"report": report.as_dict()}
    if run.cfg["system"]["kind"] != "custom":
        doubled = build_system(run.cfg.with_overrides(truncation=2 * run.cfg.N))
        r2 = spectral_radius(closed_loop(doubled))
        payload["doubling"] = {"truncation_N": 2 * run.cfg.N, "spectral_radius": r2,
                               "change": abs(r2 - report.spectral_radius)}
    run.json("analyze_report.json", payload)
    verdict = "stable" if report.verdict else "not stable"
    _print(f"N={sys.N} spectral radius {report.spectral_radius:.9f} "
           f"rate margin {report.rate_margin:.9f}: {verdict}")
    return EXIT_OK


def cmd_radius(args):
    run = _Run(_config(args))
    sys = build_system(run.cfg)
    if sys.P is None:
        raise ConfigError(["perturbation: radius needs d and H"])
    a = run.cfg["analysis"]
    try:
        rad = stability_radius(sys, a["c_max"], a["tol_c"], a["prescan"], a["workers"])
    except PreconditionError as exc:
        run.json("radius_report.json", {"status": "hypothesis_violation",
                                        "nominal_spectral_radius": exc.nominal_radius,
                                        "message": str(exc)})
        _err(f"hypothesis violation: {exc}")
        return EXIT_HYPOTHESIS
    path = run.csv_path("radius_curve.csv")
    if path is not None:
        ts = np.linspace(0.0, sys.tau, CURVE_POINTS)
        rows = []
        for c, r in rad.curve:
            gap = perturbation_gaps(sys, c, ts)
            rows.append((c, r, gap[1], gap[2]))
        write_curve_csv(path, rows)
    run.json("radius_report.json", {"status": "ok", "report": rad.as_dict()})
    note = "first crossing" if rad.crossing else "no crossing below c_max"
    _print(f"c_hat_star = {rad.c_hat_star:.9f} ({note}), bracket [{rad.bracket_lo:.9f}, {rad.bracket_hi:.9f}]")
    return EXIT_OK


def cmd_sweep(args):
    run = _Run(_config(args))
    sys = build_system(run.cfg)
    if sys.P is None:
        raise ConfigError(["perturbation: sweep needs d and H"])
    a = run.cfg["analysis"]
    grid = run.cfg["perturbation"]["c_grid"]
    ts = np.linspace(0.0, sys.tau, a["convergence_points"])

    def point(c):
        gap = perturbation_gaps(sys, c, ts)
        return (c, spectral_radius(closed_loop(sys.with_scale(c))), gap[1], gap[2], gap[3])

    with ThreadPoolExecutor(max_workers=a["workers"]) as pool:
        rows = list(pool.map(point, grid))
    # single collector: results are written in grid order after all points finish
    path = run.csv_path("sweep.csv")
    if path is not None:
        write_curve_csv(path, [r[:4] for r in rows])
    threshold = float(np.exp(-sys.omega * sys.tau))
    run.json("sweep_report.json", {
        "truncation_N": sys.N,
        "rows": [{"c": c, "spectral_radius": r, "sup_T_diff": dT, "sup_S_diff": dS,
                  "sup_T_norm": nT, "verdict": bool(r < threshold)} for c, r, dT, dS, nT in rows],
    })
    for c, r, dT, dS, _ in rows:
        _print(f"c={c:<10.4g} r={r:.9f} sup_T_diff={dT:.4e} sup_S_diff={dS:.4e}")
    return EXIT_OK


def cmd_validate(args):
    N = args.truncation or 32
    seed = args.seed or 0
    results = run_suites(N=N, seed=seed, inject=args.inject_defect)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        _print(f"{status}  {r.name:<{width}}  {r.value:.3e} <= {r.tolerance:.0e}  {r.detail}")
    payload = {"suites": [{"name": r.name, "value": r.value, "tolerance": r.tolerance,
                           "passed": r.passed} for r in results]}
    if args.double_N:
        rows = truncation_table(N)
        _print("truncation sensitivity (heat, default F and H)")
        _print(f"{'N':>5} {'r(c=0)':>12} {'r(c=0.05)':>14} {'c_hat_star':>14}")
        for n, r0, r1, ch in rows:
            _print(f"{n:>5d} {r0:>12.9f} {r1:>14.11f} {ch:>14.9f}")
        payload["truncation_table"] = [{"N": n, "nominal_spectral_radius": r0, "spectral_radius_c005": r1,
                                        "c_hat_star": ch} for n, r0, r1, ch in rows]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "validate_report.json").write_text(json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n")
    failed = [r.name for r in results if not r.passed]
    if failed:
        _err("failing suites: " + ", ".join(failed))
        return EXIT_VALIDATION
    return EXIT_OK


DEMO_PROFILE = "1 + cos(pi xi) + 0.3 xi^2"


def cmd_heat_demo(args):
    run = _Run(_config(args))
    cfg = run.cfg
    if cfg["system"]["kind"] != "heat":
        raise ConfigError(["system.kind: heat-demo needs kind 'heat'"])
    sys = build_system(cfg)
    a = cfg["analysis"]
    spec = HeatSystemSpec(cfg.N, sys.F, sys.P.H, sys.c, sys.tau, sys.omega)
    grid = FDGrid(a["fd"]["G"], a["fd"]["dt"], a["fd"]["scheme"])
    xi = grid.nodes
    if a["x0"] is not None:
        z0 = initial_state(cfg) @ cosine_basis(cfg.N, xi)
        profile = "analysis.x0"
    else:
        z0 = 1.0 + np.cos(np.pi * xi) + 0.3 * xi**2
        profile = DEMO_PROFILE
    try:
        fd = fd_simulate(spec, grid, z0, periods=a["periods"])
        spectral = simulate(sys, fd.states[0], a["periods"])
    except (OracleDivergenceError, InstabilityError) as exc:
        run.json("heat_demo_report.json", {"status": "overflow", "message": str(exc)})
        _err(f"overflow: {exc}")
        return EXIT_OVERFLOW
    gap = np.linalg.norm(fd.states - spectral.states, axis=1) / np.linalg.norm(spectral.states, axis=1)
    for name, traj in (("spectral_trajectory.csv", spectral), ("fd_trajectory.csv", fd)):
        path = run.csv_path(name)
        if path is not None:
            traj.to_csv(path)
    tol = 1e-3
    ok = bool(gap.max() <= tol)
    run.json("heat_demo_report.json", {
        "status": "ok" if ok else "mismatch",
        "initial_profile": profile,
        "max_relative_gap": float(gap.max()),
        "relative_gap_per_period": gap,
        "tolerance": tol,
        "spectral_radius": spectral_radius(closed_loop(sys)),
    })
    _print(f"FD (G={grid.G}) vs spectral (N={cfg.N}): max relative gap {gap.max():.3e} over {a['periods']} periods")
    return EXIT_OK if ok else EXIT_VALIDATION


COMMANDS = {
    "simulate": (cmd_simulate, "simulate the sampled loop and write a trajectory CSV"),
    "analyze": (cmd_analyze, "spectral-radius stability report"),
    "radius": (cmd_radius, "search the perturbation scale where stability is lost"),
    "sweep": (cmd_sweep, "spectral radius and semigroup gaps over perturbation.c_grid"),
    "validate": (cmd_validate, "run the built-in numerical self-checks"),
    "heat-demo": (cmd_heat_demo, "cross-check the heat model against finite differences"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="sdrobust", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="YAML scenario file")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides output.directory)")
        p.add_argument("--truncation", metavar="N", type=int, help="override system.N")
        p.add_argument("--seed", type=int, help="override analysis.seed")
        p.add_argument("--workers", type=int, help="override analysis.workers")
        if name == "validate":
            p.add_argument("--double-N", dest="double_N", action="store_true",
                           help="also print a truncation-sensitivity table at N and 2N")
            p.add_argument("--inject-defect", choices=DEFECTS, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command][0](args)
    except ConfigError as exc:
        for problem in exc.problems:
            _err(f"config error: {problem}")
        return EXIT_CONFIG


if __name__ == "__main__":
    _sys.exit(main())
