"""Self-check suites shared by ``sdrobust validate`` and the test suite.

Each suite computes one worst-case residual on the heat system and compares
it with a fixed tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .heat import (
    FDGrid,
    HeatSystemSpec,
    admissibility_probe,
    build_heat_system,
    eta_consistency_check,
    fd_simulate,
    heat_perturbation_coefficients,
)
from .perturbation import (
    lambda_star_search,
    perturbed_semigroup_expm,
    perturbed_semigroup_volterra,
    build_perturbed_matrix,
    resolvent_identity_check,
    variation_of_constants_residual,
)
from .sampled_loop import (
    closed_loop,
    hold_nominal,
    hold_nominal_via_resolvent,
    hold_perturbed,
    hold_perturbed_via_resolvent,
    simulate,
)
from .spectral_core import DiagonalGenerator
from .stability import spectral_radius, stability_radius

__all__ = ["SuiteResult", "SUITES", "run_suites", "truncation_table", "fd_cross_validation"]

DEFECTS = ("eta_consistency",)


@dataclass(frozen=True)
class SuiteResult:
    name: str
    value: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)


def _heat(N, c):
    return build_heat_system(HeatSystemSpec(N=N, c=c))


def vcf_suite(N=32, seed=0, inject=None):
    sys = _heat(N, 0.2)
    X = np.random.default_rng(seed).standard_normal((N, 10))
    X /= np.linalg.norm(X, axis=0)
    res = variation_of_constants_residual(sys.gen, sys.P, np.linspace(0.0, 0.1, 16), X)
    return SuiteResult("vcf_residual", float(res.max()), 1e-8, "N=%d c=0.2 t<=0.1" % N)


def volterra_suite(N=32, seed=0, inject=None):
    n = min(N, 16)
    sys = _heat(n, 0.5)
    path = perturbed_semigroup_volterra(sys.gen, sys.P, 0.1)
    A_D = build_perturbed_matrix(sys.gen, sys.P)
    err = max(float(np.abs(path.samples[i] - perturbed_semigroup_expm(A_D, t).entries).max())
              for i, t in enumerate(path.times))
    return SuiteResult("volterra_vs_expm", err, 1e-8, "N=%d c=0.5 t<=0.1" % n)


def resolvent_suite(N=32, seed=0, inject=None):
    worst, alphas = 0.0, []
    for c in (0.1, 0.5, 1.0):
        sys = _heat(N, c)
        rep = resolvent_identity_check(sys.gen, sys.P, lambda_star_search(sys.gen, sys.P))
        worst = max(worst, rep.identity_residual, rep.extended_residual)
        alphas.append(rep.alpha)
    if max(alphas) >= 1.0:
        worst = np.inf
    return SuiteResult("resolvent_identity", worst, 1e-10, "max alpha %.3g" % max(alphas))


def _hold_gap(exact, smoothed, sys):
    ts = np.linspace(0.0, sys.tau, 32)
    return max(float(np.abs(exact(sys, t).coefficients - smoothed(sys, t).coefficients).max())
               for t in ts)


def hold_nominal_suite(N=32, seed=0, inject=None):
    sys = _heat(N, 0.0)
    return SuiteResult("hold_nominal", _hold_gap(hold_nominal, hold_nominal_via_resolvent, sys),
                       1e-11, "closed form vs resolvent form, tau=0.05")


def hold_perturbed_suite(N=32, seed=0, inject=None):
    sys = _heat(N, 0.2)
    return SuiteResult("hold_perturbed", _hold_gap(hold_perturbed, hold_perturbed_via_resolvent, sys),
                       1e-9, "expm vs resolvent form, c=0.2, tau=0.05")


def eta_suite(N=32, seed=0, inject=None):
    d = heat_perturbation_coefficients(16)
    if inject == "eta_consistency":
        d = d.copy()
        d[0] += 0.1
    return SuiteResult("eta_consistency", eta_consistency_check(16, 4096, d), 1e-8, "N=16, 4096 points")


def fd_cross_validation(N=32, c=0.05, G=401, steps_per_period=200, periods=5):
    """Largest relative l2 gap between FD and spectral mode coefficients over the run."""
    spec = HeatSystemSpec(N=N, c=c)
    grid = FDGrid(G, spec.tau / steps_per_period)
    xi = grid.nodes
    fd = fd_simulate(spec, grid, 1.0 + np.cos(np.pi * xi) + 0.3 * xi**2, periods=periods)
    spectral = simulate(build_heat_system(spec), fd.states[0], periods)
    gap = np.linalg.norm(fd.states - spectral.states, axis=1)
    return float((gap / np.linalg.norm(spectral.states, axis=1)).max())


def fd_suite(N=32, seed=0, inject=None):
    return SuiteResult("fd_cross_validation", fd_cross_validation(N), 1e-3, "G=401, c=0.05, 5 periods")


def admissibility_suite(N=32, seed=0, inject=None):
    gen = DiagonalGenerator(-(np.arange(256) * np.pi) ** 2)
    rep = admissibility_probe(gen, heat_perturbation_coefficients(256), 2.0, seed=seed)
    return SuiteResult("admissibility_probe", float(rep.growth.max()), rep.threshold, "heat d, p=2")


SUITES = {
    "vcf_residual": vcf_suite,
    "volterra_vs_expm": volterra_suite,
    "resolvent_identity": resolvent_suite,
    "hold_nominal": hold_nominal_suite,
    "hold_perturbed": hold_perturbed_suite,
    "eta_consistency": eta_suite,
    "fd_cross_validation": fd_suite,
    "admissibility_probe": admissibility_suite,
}


def run_suites(N: int = 32, seed: int = 0, inject: Optional[str] = None, only=None):
    if inject is not None and inject not in DEFECTS:
        raise ValueError(f"unknown defect {inject!r}; known: {', '.join(DEFECTS)}")
    names = list(SUITES) if only is None else list(only)
    return [SUITES[name](N=N, seed=seed, inject=inject) for name in names]


def truncation_table(N: int = 32, tol_c: float = 1e-6):
    """Rows ``(N, nominal radius, r(Delta) at c=0.05, c_hat_star)`` for N and 2N."""
    rows = []
    for n in (N, 2 * N):
        sys = _heat(n, 0.05)
        rad = stability_radius(sys, tol_c=tol_c)
        rows.append((n, rad.nominal_radius, spectral_radius(closed_loop(sys)), rad.c_hat_star))
    return rows
