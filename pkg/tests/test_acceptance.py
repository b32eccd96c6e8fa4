"""Acceptance gate: ten criteria at their stated tolerances.

Each test records one PASS/FAIL line; the lines are echoed in the pytest
terminal summary (see conftest.py) and, with ``-s``, as the tests run.
"""

import time

import numpy as np
import pytest
import yaml

from sdrobust.cli import main
from sdrobust.errors import AdmissibilityConditionError
from sdrobust.heat import (
    DiagonalSystemSpec,
    HeatSystemSpec,
    admissibility_probe,
    build_diagonal_system,
    build_heat_system,
    default_feedback,
    eta,
    eta_consistency_check,
    heat_eigenvalues,
    heat_perturbation_coefficients,
    simpson_weights,
)
from sdrobust.perturbation import lambda_star_search, resolvent_identity_check, variation_of_constants_residual
from sdrobust.sampled_loop import (
    closed_loop,
    hold_nominal,
    hold_nominal_via_resolvent,
    hold_perturbed,
    hold_perturbed_via_resolvent,
    simulate,
)
from sdrobust.spectral_core import DiagonalGenerator
from sdrobust.stability import convergence_study, decay_fit, spectral_radius, stability_radius
from sdrobust.validation import fd_cross_validation

RESULTS = []


def record(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def heat(N=32, c=0.0, **kw):
    return build_heat_system(HeatSystemSpec(N=N, c=c, **kw))


def test_01_variation_of_constants():
    t0 = time.perf_counter()
    sys = heat(32, 0.2)
    X = np.random.default_rng(1).standard_normal((32, 10))
    X /= np.linalg.norm(X, axis=0)
    res = variation_of_constants_residual(sys.gen, sys.P, np.linspace(0.0, 0.1, 16), X).max()
    dt = time.perf_counter() - t0
    record(1, res <= 1e-8 and dt < 10.0, f"VCF residual {res:.2e} <= 1e-8, {dt:.2f} s < 10 s")


def test_02_resolvent_identities():
    worst, alphas = 0.0, []
    for c in (0.1, 0.5, 1.0):
        sys = heat(32, c)
        rep = resolvent_identity_check(sys.gen, sys.P, lambda_star_search(sys.gen, sys.P))
        worst = max(worst, rep.identity_residual, rep.extended_residual)
        alphas.append(rep.alpha)
    ok = worst <= 1e-10 and max(alphas) < 1.0
    record(2, ok, f"resolvent residual {worst:.2e} <= 1e-10, alpha = {', '.join(f'{a:.3f}' for a in alphas)} < 1")


def test_03_hold_representations():
    nominal = perturbed = 0.0
    for c in (0.05, 0.2, 1.0):
        sys = heat(32, c, tau=0.05)
        for t in np.linspace(0.0, 0.05, 32):
            nominal = max(nominal, np.abs(hold_nominal(sys, t).coefficients
                                          - hold_nominal_via_resolvent(sys, t).coefficients).max())
            perturbed = max(perturbed, np.abs(hold_perturbed(sys, t).coefficients
                                              - hold_perturbed_via_resolvent(sys, t).coefficients).max())
    record(3, nominal <= 1e-11 and perturbed <= 1e-9,
           f"hold gap nominal {nominal:.2e} <= 1e-11, perturbed {perturbed:.2e} <= 1e-9")


def test_04_convergence_as_c_vanishes():
    t0 = time.perf_counter()
    table = convergence_study(heat(32, 0.0), [1e-1, 1e-2, 1e-3, 1e-4])
    dt = time.perf_counter() - t0
    chk = table.checks(final_ratio=1e-3, ratio_factor=2.0)
    ok = all(chk[k] for k in ("T_monotone", "S_monotone", "T_final_ok", "S_final_ok",
                              "T_first_order", "S_first_order")) and dt < 30.0
    record(4, ok, f"final/first T {chk['T_final_ratio']:.6f}, S {chk['S_final_ratio']:.6f} (<= 1e-3), "
                  f"diff/c spread T {chk['T_ratio_spread']:.4f}, S {chk['S_ratio_spread']:.4f} (<= 2), {dt:.2f} s")


def test_05_stability_radius():
    sys = heat(32, 0.0, tau=0.05, omega=0.0)
    rad = stability_radius(sys)
    grid = np.linspace(0.0, rad.c_hat_star, 8)
    radii = [spectral_radius(closed_loop(sys.with_scale(c))) for c in grid]
    rad64 = stability_radius(heat(64, 0.0, tau=0.05, omega=0.0))
    change = abs(rad64.c_hat_star - rad.c_hat_star) / rad.c_hat_star
    ok = rad.nominal_radius < 1.0 and rad.c_hat_star > 0 and max(radii) < 1.0 and change < 0.05
    record(5, ok, f"nominal r {rad.nominal_radius:.4f}, c_hat* {rad.c_hat_star:.6f} (N=32) vs "
                  f"{rad64.c_hat_star:.6f} (N=64), change {change:.1e} < 5%, max r on [0, c_hat*] {max(radii):.9f} < 1")


def test_06_decay_matches_spectral_radius():
    rng = np.random.default_rng(2024)
    worst, count = 0.0, 0
    while count < 20:
        N = int(rng.choice([16, 24, 32]))
        k, tau, c = rng.uniform(0.5, 15.0), rng.uniform(0.02, 0.1), rng.uniform(0.0, 0.3)
        sys = heat(N, c, F=default_feedback(N, k), tau=tau)
        r = spectral_radius(closed_loop(sys))
        if not 1e-3 < r < 1.0:
            continue
        # keep the tail above the 1e-300 fit floor
        periods = int(min(200, max(12, np.floor(np.log(1e-250) / np.log(r)))))
        x0 = rng.standard_normal(N)
        fit = decay_fit(simulate(sys, x0 / np.linalg.norm(x0), periods))
        worst = max(worst, abs(fit.theta - r) / r)
        count += 1
    record(6, worst <= 0.02, f"max |theta - r|/r over 20 stable configurations {worst:.2e} <= 2e-2")


def scalar_oracle(tol=1e-10):
    f = lambda c: np.exp(c) - np.expm1(c) / c - 1.0
    lo, hi = 0.5, 1.5
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) < 0 else (lo, mid)
    return 0.5 * (lo + hi)


def test_07_scalar_radius_via_cli(tmp_path):
    import json
    cfg = {
        "system": {"kind": "custom", "eigenvalues": [0.0]},
        "perturbation": {"d": [1.0], "H": [1.0]},
        "loop": {"b": [1.0], "F": [-1.0], "tau": 1.0, "omega": 0.0},
        "analysis": {"c_max": 1.0, "tol_c": 1e-6},
    }
    path = tmp_path / "scalar.yaml"
    path.write_text(yaml.safe_dump(cfg))
    code = main(["radius", "--config", str(path), "--out", str(tmp_path / "out")])
    report = json.loads((tmp_path / "out" / "radius_report.json").read_text())["report"]
    oracle = scalar_oracle()
    err = abs(report["c_hat_star"] - oracle)
    record(7, code == 0 and err <= 1e-6,
           f"CLI c_hat* {report['c_hat_star']:.9f} vs closed-form crossing {oracle:.9f}, |diff| {err:.1e} <= 1e-6")


def test_08_eta_representation():
    res = eta_consistency_check(16, 4096)
    xi = np.linspace(0.0, 1.0, 4097)
    mean = simpson_weights(xi.size) @ eta(xi)
    d0 = heat_perturbation_coefficients(1)[0]
    n0 = abs((1.0 - 0.0) * mean - d0)
    record(8, res <= 1e-8 and n0 <= 1e-8,
           f"eta residual {res:.2e} <= 1e-8, <eta, f_0> = {mean:.12f}, n=0 gap {n0:.1e}")


def test_09_pde_cross_validation():
    t0 = time.perf_counter()
    gap = fd_cross_validation(N=32, c=0.05, G=401, periods=5)
    dt = time.perf_counter() - t0
    record(9, gap <= 1e-3 and dt < 60.0, f"FD (G=401) vs spectral (N=32) relative gap {gap:.2e} <= 1e-3, {dt:.2f} s")


def test_10_admissibility_gate():
    accepted = build_diagonal_system(DiagonalSystemSpec(N=16, gamma=1.0, q=2.0)).metadata["p"] == 2.0
    try:
        DiagonalSystemSpec(N=16, gamma=1.0, q=1.5)
        rejected = False
    except AdmissibilityConditionError:
        rejected = True
    gen = DiagonalGenerator(heat_eigenvalues(256))
    good = admissibility_probe(gen, heat_perturbation_coefficients(256), 2.0)
    bad = admissibility_probe(gen, np.arange(256.0), 2.0)
    ok = accepted and rejected and good.passed and not bad.passed
    record(10, ok, f"(gamma=1, q=2) accepted with p=2: {accepted}; (gamma=1, q=1.5) rejected: {rejected}; "
                   f"probe growth heat d {good.growth.max():.1e}, d_n = n {bad.growth.max():.2f} (threshold 1e-2)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
