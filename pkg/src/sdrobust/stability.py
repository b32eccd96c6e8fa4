"""Power stability, decay-rate fits, perturbation margins and c -> 0 studies.

A truncated loop is exponentially stable with rate above ``omega`` iff the
spectral radius of ``Delta_D(tau)`` is below ``exp(-omega tau)``.  Tail modes
beyond the truncation are not certified; every report carries ``N``.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import AnalysisError, DomainError, PreconditionError
from .sampled_loop import SampledSystem, Trajectory, closed_loop, hold_nominal, perturbed_transition
from .spectral_core import operator_norm

__all__ = [
    "DecayFit",
    "StabilityReport",
    "RadiusReport",
    "ConvergenceTable",
    "spectral_radius",
    "power_stability",
    "analyze",
    "decay_fit",
    "stability_radius",
    "convergence_study",
    "perturbation_gaps",
    "write_curve_csv",
    "DEFAULT_PRESCAN",
]

DEFAULT_PRESCAN = 32


@dataclass(frozen=True)
class DecayFit:
    M: float
    theta: float
    deadbeat: bool = False


@dataclass(frozen=True)
class StabilityReport:
    spectral_radius: float
    rate_margin: float
    verdict: bool
    truncation_N: int
    tau: float
    omega: float
    c: float = 0.0
    power_fit: Optional[DecayFit] = None
    metadata: dict = field(default_factory=dict)

    def as_dict(self):
        out = {
            "spectral_radius": self.spectral_radius,
            "rate_margin": self.rate_margin,
            "verdict": self.verdict,
            "truncation_N": self.truncation_N,
            "tau": self.tau,
            "omega": self.omega,
            "c": self.c,
        }
        if self.power_fit is not None:
            out["fit_M"] = self.power_fit.M
            out["fit_theta"] = self.power_fit.theta
            out["fit_deadbeat"] = self.power_fit.deadbeat
        out.update(self.metadata)
        return out

    def to_json(self, **kw):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, **kw)


@dataclass(frozen=True)
class RadiusReport:
    c_hat_star: float
    bracket_lo: float
    bracket_hi: float
    crossing: bool
    curve: np.ndarray
    truncation_N: int
    tau: float
    omega: float
    c_max: float
    tol_c: float
    lipschitz: float
    nominal_radius: float

    def as_dict(self):
        return {
            "c_hat_star": self.c_hat_star,
            "bracket_lo": self.bracket_lo,
            "bracket_hi": self.bracket_hi,
            "crossing": self.crossing,
            "note": "first crossing" if self.crossing else "no crossing below c_max",
            "truncation_N": self.truncation_N,
            "tau": self.tau,
            "omega": self.omega,
            "c_max": self.c_max,
            "tol_c": self.tol_c,
            "lipschitz_estimate": self.lipschitz,
            "nominal_spectral_radius": self.nominal_radius,
        }


def spectral_radius(matrix) -> float:
    m = getattr(matrix, "entries", matrix)
    try:
        ev = scipy.linalg.eigvals(m)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise AnalysisError(f"eigenvalue computation failed: {exc}") from exc
    if not np.all(np.isfinite(ev)):
        raise AnalysisError("eigenvalue computation returned non-finite values")
    return float(np.abs(ev).max(initial=0.0))


def power_stability(delta, omega: float, tau: float, truncation_N: Optional[int] = None,
                    c: float = 0.0) -> StabilityReport:
    """Spectral-radius test ``exp(omega tau) r(Delta) < 1``."""
    if not tau > 0.0:
        raise DomainError("tau must be positive")
    if not omega >= 0.0:
        raise DomainError("omega must be nonnegative")
    r = spectral_radius(delta)
    margin = float(np.exp(omega * tau) * r)
    N = truncation_N if truncation_N is not None else np.shape(getattr(delta, "entries", delta))[0]
    return StabilityReport(r, margin, bool(margin < 1.0), int(N), float(tau), float(omega), float(c))


def analyze(sys: SampledSystem, trajectory: Optional[Trajectory] = None) -> StabilityReport:
    """:func:`power_stability` for ``sys``, plus a decay fit when a trajectory is given."""
    report = power_stability(closed_loop(sys), sys.omega, sys.tau, sys.N, sys.c)
    if trajectory is None:
        return report
    fit = decay_fit(trajectory)
    if fit.theta > 1.0:
        # theta is only meaningful for decaying runs
        fit = None
    return StabilityReport(report.spectral_radius, report.rate_margin, report.verdict, sys.N,
                           sys.tau, sys.omega, sys.c, fit)


def decay_fit(traj: Trajectory) -> DecayFit:
    """Least-squares fit ``log||x(k tau)|| ~ log(M ||x0||) + k log theta`` on the last two thirds.

    A trajectory that reaches exactly zero after the first period is reported
    as deadbeat with ``theta = 0`` and ``M = 1``.
    """
    norms = traj.boundary_norms()
    K = norms.size - 1
    if K < 12:
        raise ValueError(f"decay fit needs at least 12 periods, got {K}")
    if norms[0] == 0.0:
        raise ValueError("initial state is zero")
    if np.any(norms[1:] == 0.0):
        return DecayFit(1.0, 0.0, True)
    start = K // 3
    k = np.arange(start, K + 1)
    tail = norms[start:]
    if np.any(tail < 1e-300):
        raise ValueError("tail norms underflow; shorten the run")
    slope, intercept = np.polyfit(k, np.log(tail), 1)
    M = max(1.0, float(np.exp(intercept) / norms[0]))
    return DecayFit(M, float(np.exp(slope)))


def _radius_at(sys, c):
    return spectral_radius(closed_loop(sys.with_scale(c)))


def stability_radius(sys: SampledSystem, c_max: float = 1.0, tol_c: float = 1e-6,
                     prescan: int = DEFAULT_PRESCAN, workers: int = 1) -> RadiusReport:
    """Largest ``c`` below the first crossing of ``g(c) = exp(omega tau) r(c) - 1``.

    ``g`` is sampled on ``prescan`` equispaced points of ``[0, c_max]``; the
    first sign change is bisected to width ``tol_c``.  Monotonicity of ``g``
    is not assumed.

    Raises
    ------
    PreconditionError
        If the nominal loop already violates ``g(0) < 0``.
    """
    if sys.P is None:
        raise ValueError("system has no perturbation direction")
    if not tol_c > 0.0:
        raise ValueError("tol_c must be positive")
    if not 0.0 < c_max <= 1.0:
        raise ValueError("c_max must lie in (0, 1]")
    weight = np.exp(sys.omega * sys.tau)
    cs = np.linspace(0.0, c_max, max(prescan, 2))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            radii = np.array(list(pool.map(lambda c: _radius_at(sys, c), cs)))
    else:
        radii = np.array([_radius_at(sys, c) for c in cs])
    g = weight * radii - 1.0
    if not g[0] < 0.0:
        raise PreconditionError(
            f"nominal loop is not exponentially stable with rate above omega={sys.omega}: "
            f"spectral radius {radii[0]:.6g}, threshold {np.exp(-sys.omega * sys.tau):.6g}",
            float(radii[0]),
        )
    lipschitz = float(np.max(np.abs(np.diff(radii)) / np.diff(cs)))
    curve = [(float(c), float(r)) for c, r in zip(cs, radii)]
    above = np.nonzero(g >= 0.0)[0]
    if above.size == 0:
        return RadiusReport(float(c_max), float(c_max), float(c_max), False, np.array(curve),
                            sys.N, sys.tau, sys.omega, float(c_max), float(tol_c), lipschitz,
                            float(radii[0]))
    j = int(above[0])
    lo, hi = float(cs[j - 1]), float(cs[j])
    while hi - lo > tol_c:
        mid = 0.5 * (lo + hi)
        r = _radius_at(sys, mid)
        curve.append((mid, r))
        if weight * r - 1.0 < 0.0:
            lo = mid
        else:
            hi = mid
    curve.sort()
    return RadiusReport(lo, lo, hi, True, np.array(curve), sys.N, sys.tau, sys.omega,
                        float(c_max), float(tol_c), lipschitz, float(radii[0]))


@dataclass(frozen=True)
class ConvergenceTable:
    """Rows ``(c, sup_t ||T_D - T||, sup_t ||S_D - S||, sup_t ||T_D||)``."""

    rows: np.ndarray
    tau: float
    truncation_N: int

    @property
    def c(self):
        return self.rows[:, 0]

    @property
    def sup_T_diff(self):
        return self.rows[:, 1]

    @property
    def sup_S_diff(self):
        return self.rows[:, 2]

    @property
    def sup_T_norm(self):
        return self.rows[:, 3]

    def checks(self, final_ratio=1e-3, ratio_factor=2.0):
        """Monotone decrease, overall reduction and first-order ``diff/c`` behaviour."""
        positive = self.c > 0
        c, dT, dS = self.c[positive], self.sup_T_diff[positive], self.sup_S_diff[positive]
        out = {}
        for name, col in (("T", dT), ("S", dS)):
            ratios = col[-3:] / c[-3:]
            out[f"{name}_monotone"] = bool(np.all(np.diff(col) < 0))
            out[f"{name}_final_ratio"] = float(col[-1] / col[0])
            out[f"{name}_final_ok"] = bool(col[-1] <= final_ratio * col[0])
            out[f"{name}_ratio_spread"] = float(ratios.max() / ratios.min())
            out[f"{name}_first_order"] = bool(ratios.max() <= ratio_factor * ratios.min())
        return out


def convergence_study(sys: SampledSystem, c_grid: Sequence[float], tau: Optional[float] = None,
                      points: int = 64) -> ConvergenceTable:
    """Sup over ``points`` equispaced ``t`` in ``[0, tau]`` of the semigroup and hold gaps.

    See :func:`perturbation_gaps` for the norms used.
    """
    if sys.P is None:
        raise ValueError("system has no perturbation direction")
    tau = sys.tau if tau is None else tau
    grid = [float(c) for c in c_grid]
    positive = [c for c in grid if c != 0.0]
    if any(c < 0.0 or c > 1.0 for c in grid):
        raise ValueError("c grid must lie in [0, 1]")
    if any(b >= a for a, b in zip(positive, positive[1:])):
        raise ValueError("c grid must be strictly descending")
    ts = np.linspace(0.0, tau, points)
    rows = [perturbation_gaps(sys, c, ts) for c in grid]
    return ConvergenceTable(np.array(rows), float(tau), sys.N)


def perturbation_gaps(sys: SampledSystem, c: float, ts):
    """``(c, sup ||T_cD - T||, sup ||S_cD - S||, sup ||T_cD||)`` over the times ``ts``.

    Operator norms follow :func:`operator_norm` (exact for ``q = 2``); the hold
    difference acts on the scalar input, so its norm is a vector norm.  At
    ``c = 0`` the gaps are exactly zero.
    """
    q = sys.gen.q
    nominal_T = np.exp(np.outer(ts, sys.gen.eigenvalues))
    if c == 0.0:
        return (0.0, 0.0, 0.0, float(np.abs(nominal_T).max()))
    perturbed = sys.with_scale(c)
    dT = dS = normT = 0.0
    for i, t in enumerate(ts):
        TD, s = perturbed_transition(perturbed, t)
        dT = max(dT, operator_norm(TD - np.diag(nominal_T[i]), q))
        dS = max(dS, float(np.linalg.norm(s - hold_nominal(sys, t).coefficients, q)))
        normT = max(normT, operator_norm(TD, q))
    return (float(c), dT, dS, normT)


def write_curve_csv(path, rows):
    """CSV with columns ``c, spectral_radius, sup_T_diff, sup_S_diff``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c", "spectral_radius", "sup_T_diff", "sup_S_diff"])
        for row in rows:
            w.writerow([format(float(v), ".17g") for v in row])
