"""Scenario files: YAML with a fixed key schema.

    system:        kind (heat | diagonal | custom), N, and per kind
                   kappa, gamma, zeta, q (diagonal) or eigenvalues, q (custom);
                   sequence_bound for declared bounded sequences
    perturbation:  d, H, c, c_grid
    loop:          b, F, feedback_gain, tau, omega
    analysis:      periods, substeps, x0, seed, c_max, tol_c, prescan,
                   convergence_points, workers, fd {G, dt, scheme}
    output:        directory, formats

Coefficient lists shorter than N are padded with zeros and longer ones are
cut at N.  Every problem found is reported at once through ConfigError.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .errors import AdmissibilityConditionError, ConfigError
from .heat import (
    HEAT_FEEDBACK_GAIN,
    DiagonalSystemSpec,
    HeatSystemSpec,
    build_diagonal_system,
    build_heat_system,
    default_boundary_functional,
    heat_control_coefficients,
    heat_perturbation_coefficients,
)
from .perturbation import RankOnePerturbation
from .sampled_loop import ControlOperator, SampledSystem
from .spectral_core import DEFAULT_SEQUENCE_BOUND, DiagonalGenerator, DualFunctional, ExtrapolationVector

__all__ = ["DEFAULTS", "ScenarioConfig", "load_config", "resolve_config", "build_system", "initial_state"]

KINDS = ("heat", "diagonal", "custom")

DEFAULTS = {
    "system": {
        "kind": "heat",
        "N": 64,
        "kappa": 1.0,
        "gamma": 1.0,
        "zeta": 0.0,
        "q": 2.0,
        "eigenvalues": None,
        "sequence_bound": DEFAULT_SEQUENCE_BOUND,
    },
    "perturbation": {"d": None, "H": None, "c": 0.0, "c_grid": [1e-1, 1e-2, 1e-3, 1e-4]},
    "loop": {"b": None, "F": None, "feedback_gain": HEAT_FEEDBACK_GAIN, "tau": 0.05, "omega": 0.0},
    "analysis": {
        "periods": 40,
        "substeps": 1,
        "x0": None,
        "seed": 0,
        "c_max": 1.0,
        "tol_c": 1e-6,
        "prescan": 32,
        "convergence_points": 64,
        "workers": 1,
        "fd": {"G": 401, "dt": 2.5e-4, "scheme": "trapezoidal"},
    },
    "output": {"directory": "out", "formats": ["csv", "json"]},
}

_LISTS = {("perturbation", "d"), ("perturbation", "H"), ("loop", "b"), ("loop", "F"),
          ("analysis", "x0"), ("system", "eigenvalues")}


@dataclass(frozen=True)
class ScenarioConfig:
    """Resolved configuration; ``data`` has every default filled in."""

    data: dict
    source: Optional[str] = None

    def __getitem__(self, block):
        return self.data[block]

    @property
    def N(self) -> int:
        return self.data["system"]["N"]

    def as_dict(self):
        return copy.deepcopy(self.data)

    def with_overrides(self, truncation=None, seed=None, workers=None, out=None) -> "ScenarioConfig":
        raw = self.as_dict()
        if truncation is not None:
            raw["system"]["N"] = truncation
            if raw["system"]["kind"] == "custom":
                raise ConfigError(["system.N: --truncation cannot resize a custom eigenvalue list"])
        if seed is not None:
            raw["analysis"]["seed"] = seed
        if workers is not None:
            raw["analysis"]["workers"] = workers
        if out is not None:
            raw["output"]["directory"] = str(out)
        return resolve_config(raw, self.source)


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"invalid YAML in {path}: {exc}"]) from exc
    return resolve_config(raw or {}, str(path))


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def resolve_config(raw, source=None) -> ScenarioConfig:
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping of blocks"])
    data = copy.deepcopy(DEFAULTS)
    for block, values in raw.items():
        if block not in DEFAULTS:
            problems.append(f"{block}: unknown block")
            continue
        if values is None:
            continue
        if not isinstance(values, dict):
            problems.append(f"{block}: must be a mapping")
            continue
        for key, v in values.items():
            if key not in DEFAULTS[block]:
                problems.append(f"{block}.{key}: unknown key")
            elif key == "fd":
                if not isinstance(v, dict):
                    problems.append("analysis.fd: must be a mapping")
                    continue
                for k2, v2 in v.items():
                    if k2 not in DEFAULTS["analysis"]["fd"]:
                        problems.append(f"analysis.fd.{k2}: unknown key")
                    else:
                        data["analysis"]["fd"][k2] = v2
            else:
                data[block][key] = v

    s, p, lp, a = data["system"], data["perturbation"], data["loop"], data["analysis"]

    def need(cond, msg):
        if not cond:
            problems.append(msg)
        return cond

    need(s["kind"] in KINDS, f"system.kind: must be one of {', '.join(KINDS)}, got {s['kind']!r}")
    for block, key in sorted(_LISTS):
        v = data[block][key]
        if v is not None and not (isinstance(v, list) and all(_is_number(x) for x in v)):
            problems.append(f"{block}.{key}: must be a list of finite numbers")
            data[block][key] = None
    if s["kind"] == "custom":
        if need(s["eigenvalues"] is not None and len(s["eigenvalues"]) > 0,
                "system.eigenvalues: required for kind 'custom'"):
            s["N"] = len(s["eigenvalues"])
        for block, key in (("loop", "b"), ("loop", "F")):
            need(data[block][key] is not None, f"{block}.{key}: required for kind 'custom'")
        if p["d"] is not None or p["H"] is not None:
            need(p["d"] is not None and p["H"] is not None,
                 "perturbation: d and H must be given together for kind 'custom'")
    elif s["eigenvalues"] is not None:
        problems.append("system.eigenvalues: only allowed for kind 'custom'")
    need(isinstance(s["N"], int) and not isinstance(s["N"], bool) and s["N"] >= (2 if s["kind"] == "heat" else 1),
         f"system.N: must be an integer >= {2 if s['kind'] == 'heat' else 1}, got {s['N']!r}")
    need(_is_number(s["q"]) and s["q"] > 1, f"system.q: must be a number > 1, got {s['q']!r}")
    if s["kind"] == "heat":
        need(s["q"] == 2.0, "system.q: heat system lives in L2, q must be 2")
    for key in ("kappa", "gamma"):
        need(_is_number(s[key]) and s[key] > 0, f"system.{key}: must be positive, got {s[key]!r}")
    need(_is_number(s["zeta"]), f"system.zeta: must be a number, got {s['zeta']!r}")
    need(_is_number(s["sequence_bound"]) and s["sequence_bound"] > 0,
         "system.sequence_bound: must be positive")
    need(_is_number(p["c"]) and 0.0 <= p["c"] <= 1.0, f"perturbation.c: must lie in [0, 1], got {p['c']!r}")
    grid = p["c_grid"]
    if need(isinstance(grid, list) and len(grid) > 0 and all(_is_number(x) for x in grid),
            "perturbation.c_grid: must be a nonempty list of numbers"):
        need(all(0.0 <= x <= 1.0 for x in grid), "perturbation.c_grid: entries must lie in [0, 1]")
        pos = [x for x in grid if x > 0]
        need(all(y < x for x, y in zip(pos, pos[1:])), "perturbation.c_grid: must be strictly descending")
    need(_is_number(lp["tau"]) and lp["tau"] > 0, f"loop.tau: must be positive, got {lp['tau']!r}")
    need(_is_number(lp["omega"]) and lp["omega"] >= 0, f"loop.omega: must be nonnegative, got {lp['omega']!r}")
    need(_is_number(lp["feedback_gain"]), "loop.feedback_gain: must be a number")
    for key in ("periods", "substeps", "prescan", "convergence_points", "workers"):
        v = a[key]
        need(isinstance(v, int) and not isinstance(v, bool) and v >= 1,
             f"analysis.{key}: must be a positive integer, got {v!r}")
    need(isinstance(a["seed"], int) and not isinstance(a["seed"], bool) and a["seed"] >= 0,
         f"analysis.seed: must be a nonnegative integer, got {a['seed']!r}")
    need(_is_number(a["c_max"]) and 0 < a["c_max"] <= 1, "analysis.c_max: must lie in (0, 1]")
    need(_is_number(a["tol_c"]) and a["tol_c"] > 0, "analysis.tol_c: must be positive")
    fd = a["fd"]
    need(isinstance(fd["G"], int) and fd["G"] >= 16 and fd["G"] % 2 == 1,
         "analysis.fd.G: must be an odd integer >= 17")
    need(_is_number(fd["dt"]) and fd["dt"] > 0, "analysis.fd.dt: must be positive")
    need(fd["scheme"] in ("trapezoidal", "implicit_euler"),
         "analysis.fd.scheme: must be 'trapezoidal' or 'implicit_euler'")
    out = data["output"]
    need(isinstance(out["directory"], str) and out["directory"], "output.directory: must be a path")
    need(isinstance(out["formats"], list) and set(out["formats"]) <= {"csv", "json"},
         "output.formats: must be a list drawn from csv, json")
    if s["kind"] == "diagonal" and not problems:
        need(s["q"] >= (s["gamma"] + 1) / s["gamma"],
             f"system.q: admissibility needs q >= (gamma + 1)/gamma = {(s['gamma'] + 1) / s['gamma']:g}")
    if problems:
        raise ConfigError(problems)
    for key in ("q", "kappa", "gamma", "zeta", "sequence_bound"):
        s[key] = float(s[key])
    for block, key in (("perturbation", "c"), ("loop", "tau"), ("loop", "omega"), ("loop", "feedback_gain"),
                       ("analysis", "c_max"), ("analysis", "tol_c")):
        data[block][key] = float(data[block][key])
    fd["dt"] = float(fd["dt"])
    p["c_grid"] = [float(x) for x in grid]
    return ScenarioConfig(data, source)


def _fit(values, N):
    v = np.zeros(N)
    vals = np.asarray(values, dtype=float)[:N]
    v[: vals.size] = vals
    return v


def _defaults(cfg):
    N = cfg.N
    s, p, lp = cfg["system"], cfg["perturbation"], cfg["loop"]
    b = _fit(lp["b"], N) if lp["b"] is not None else heat_control_coefficients(N)
    d = _fit(p["d"], N) if p["d"] is not None else heat_perturbation_coefficients(N)
    H = _fit(p["H"], N) if p["H"] is not None else default_boundary_functional(N).coefficients
    if lp["F"] is not None:
        F = _fit(lp["F"], N)
    else:
        F = np.zeros(N)
        F[0] = -lp["feedback_gain"]
    bound = s["sequence_bound"]
    return (ExtrapolationVector(b, bound=bound), ExtrapolationVector(d, bound=bound),
            DualFunctional(H, s["q"]), DualFunctional(F, s["q"]))


def build_system(cfg: ScenarioConfig, c: Optional[float] = None) -> SampledSystem:
    """Instantiate the loop described by ``cfg``; ``c`` overrides perturbation.c."""
    s, lp = cfg["system"], cfg["loop"]
    c = cfg["perturbation"]["c"] if c is None else c
    try:
        b, d, H, F = _defaults(cfg)
    except ValueError as exc:
        raise ConfigError([f"coefficients: {exc}"]) from exc
    if s["kind"] == "heat":
        sys = build_heat_system(HeatSystemSpec(cfg.N, F, H, c, lp["tau"], lp["omega"]))
        if cfg["loop"]["b"] is not None or cfg["perturbation"]["d"] is not None:
            sys = SampledSystem(sys.gen, ControlOperator(b), F, lp["tau"],
                                RankOnePerturbation(d, H, c), lp["omega"], sys.metadata)
        return sys
    if s["kind"] == "diagonal":
        try:
            spec = DiagonalSystemSpec(cfg.N, s["kappa"], s["gamma"], s["zeta"], s["q"], b, d, H, F,
                                      c, lp["tau"], lp["omega"])
        except AdmissibilityConditionError as exc:
            raise ConfigError([f"system.q: {exc}"]) from exc
        return build_diagonal_system(spec)
    gen = DiagonalGenerator(s["eigenvalues"], s["q"])
    P = RankOnePerturbation(d, H, c) if cfg["perturbation"]["d"] is not None else None
    return SampledSystem(gen, ControlOperator(b), F, lp["tau"], P, lp["omega"], {"example": "custom"})


def initial_state(cfg: ScenarioConfig) -> np.ndarray:
    """``analysis.x0`` padded to N, or a seeded random unit vector."""
    a = cfg["analysis"]
    if a["x0"] is not None:
        return _fit(a["x0"], cfg.N)
    x = np.random.default_rng(a["seed"]).standard_normal(cfg.N)
    return x / np.linalg.norm(x, cfg["system"]["q"])
