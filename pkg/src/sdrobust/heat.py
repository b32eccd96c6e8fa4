"""The heated rod and the diagonal l^q family, plus independent oracles.

Rod: ``z_t = z_xx`` on [0, 1] with the sampled heat flux ``z_x(1, t) = F z(., k tau)``
and a perturbed flux ``z_x(0, t) = c H_0 z(., t)`` at the other end.  In the
cosine basis ``f_0 = 1``, ``f_n = sqrt(2) cos(n pi xi)`` this is a diagonal
system with eigenvalues ``-n^2 pi^2`` and

    b = (1, -sqrt2, sqrt2, -sqrt2, ...)      (point flux at xi = 1)
    d = (-1, -sqrt2, -sqrt2, ...)            (point flux at xi = 0, sign flipped)

The finite-difference solver below discretises the PDE directly and is used
only to cross-check the spectral model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.special

from .errors import AdmissibilityConditionError, OracleDivergenceError
from .perturbation import RankOnePerturbation
from .sampled_loop import ControlOperator, SampledSystem, Trajectory
from .spectral_core import (
    BOUNDED_SEQUENCE,
    DiagonalGenerator,
    DualFunctional,
    ExtrapolationVector,
    phi1,
)

__all__ = [
    "HEAT_FEEDBACK_GAIN",
    "HeatSystemSpec",
    "DiagonalSystemSpec",
    "FDGrid",
    "AdmissibilityReport",
    "heat_eigenvalues",
    "heat_control_coefficients",
    "heat_perturbation_coefficients",
    "cosine_basis",
    "default_feedback",
    "default_boundary_functional",
    "build_heat_system",
    "build_diagonal_system",
    "eta",
    "eta_consistency_check",
    "simpson_weights",
    "fd_simulate",
    "admissibility_probe",
]

# Feedback u = -k <z, f_0> on the mean temperature.  With tau = 0.05 the
# nominal truncated loop has spectral radius 1 - k tau = 0.975.
HEAT_FEEDBACK_GAIN = 0.5


def heat_eigenvalues(N):
    # same rounding as -kappa n^gamma with kappa = pi^2, gamma = 2
    n = np.arange(N, dtype=float)
    return -(np.pi**2) * n**2.0


def heat_control_coefficients(N):
    n = np.arange(N)
    return np.where(n == 0, 1.0, np.sqrt(2.0) * (-1.0) ** n)


def heat_perturbation_coefficients(N):
    n = np.arange(N)
    return np.where(n == 0, -1.0, -np.sqrt(2.0))


def cosine_basis(N, xi):
    """Rows ``f_n(xi)`` for n < N."""
    n = np.arange(N)[:, None]
    xi = np.asarray(xi, dtype=float)[None, :]
    return np.where(n == 0, 1.0, np.sqrt(2.0) * np.cos(np.pi * n * xi))


def default_feedback(N, gain=HEAT_FEEDBACK_GAIN) -> DualFunctional:
    h = np.zeros(N)
    h[0] = -gain
    return DualFunctional(h, 2.0)


def default_boundary_functional(N) -> DualFunctional:
    """``H_0 z = -int_0^1 2 (1 - xi) z(xi) dxi``: heat inflow at xi = 0 driven by a
    temperature average weighted toward that end (destabilising for c > 0)."""
    n = np.arange(N)
    w = np.zeros(N)
    w[0] = 1.0
    odd = n % 2 == 1
    w[odd] = 4.0 * np.sqrt(2.0) / (n[odd] * np.pi) ** 2
    return DualFunctional(-w, 2.0)


@dataclass(frozen=True)
class HeatSystemSpec:
    N: int = 64
    F: Optional[DualFunctional] = None
    H: Optional[DualFunctional] = None
    c: float = 0.0
    tau: float = 0.05
    omega: float = 0.0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("heat system needs N >= 2")
        for name in ("F", "H"):
            f = getattr(self, name)
            if f is not None and len(f) != self.N:
                raise ValueError(f"{name} has length {len(f)}, expected N={self.N}")

    @property
    def feedback(self) -> DualFunctional:
        return self.F if self.F is not None else default_feedback(self.N)

    @property
    def boundary_functional(self) -> DualFunctional:
        return self.H if self.H is not None else default_boundary_functional(self.N)


def build_heat_system(spec: HeatSystemSpec) -> SampledSystem:
    N = spec.N
    gen = DiagonalGenerator(heat_eigenvalues(N), 2.0)
    b = ExtrapolationVector(heat_control_coefficients(N), BOUNDED_SEQUENCE)
    d = ExtrapolationVector(heat_perturbation_coefficients(N), BOUNDED_SEQUENCE)
    P = RankOnePerturbation(d, spec.boundary_functional, spec.c)
    return SampledSystem(gen, ControlOperator(b), spec.feedback, spec.tau, P, spec.omega,
                         {"example": "heat"})


@dataclass(frozen=True)
class DiagonalSystemSpec:
    """``lam_n = -kappa n^gamma + zeta`` on ``l^q``; admissibility needs ``q >= (gamma+1)/gamma``."""

    N: int = 64
    kappa: float = 1.0
    gamma: float = 1.0
    zeta: float = 0.0
    q: float = 2.0
    b: Optional[ExtrapolationVector] = None
    d: Optional[ExtrapolationVector] = None
    H: Optional[DualFunctional] = None
    F: Optional[DualFunctional] = None
    c: float = 0.0
    tau: float = 0.05
    omega: float = 0.0

    def __post_init__(self):
        if not (self.kappa > 0 and self.gamma > 0):
            raise ValueError("kappa and gamma must be positive")
        if not 1.0 < self.q < np.inf:
            raise ValueError("q must lie in (1, inf)")
        need = (self.gamma + 1.0) / self.gamma
        if self.q < need * (1.0 - 1e-14):
            raise AdmissibilityConditionError(
                f"q={self.q:g} violates the admissibility condition q >= (gamma + 1)/gamma "
                f"= {need:g} for gamma={self.gamma:g}"
            )

    @property
    def p(self) -> float:
        gq = self.gamma * self.q
        return gq / (gq - 1.0)


def build_diagonal_system(spec: DiagonalSystemSpec) -> SampledSystem:
    N = spec.N
    n = np.arange(N)
    gen = DiagonalGenerator(-spec.kappa * n.astype(float) ** spec.gamma + spec.zeta, spec.q)
    b = spec.b or ExtrapolationVector(heat_control_coefficients(N))
    d = spec.d or ExtrapolationVector(heat_perturbation_coefficients(N))
    H = spec.H or DualFunctional(default_boundary_functional(N).coefficients, spec.q)
    F = spec.F or DualFunctional(default_feedback(N).coefficients, spec.q)
    P = RankOnePerturbation(d, H, spec.c)
    meta = {"example": "diagonal", "kappa": spec.kappa, "gamma": spec.gamma,
            "zeta": spec.zeta, "q": spec.q, "p": spec.p}
    return SampledSystem(gen, ControlOperator(b), F, spec.tau, P, spec.omega, meta)


# -- eta representation ------------------------------------------------------

def eta(xi):
    """``-(e^xi + e^2 e^-xi) / (e^2 - 1)``; solves eta'' = eta, eta'(0) = 1, eta'(1) = 0."""
    xi = np.asarray(xi, dtype=float)
    e2 = np.exp(2.0)
    return -(np.exp(xi) + e2 * np.exp(-xi)) / (e2 - 1.0)


def simpson_weights(G):
    """Composite Simpson weights on ``G`` (odd) equispaced points of [0, 1]."""
    if G < 3 or G % 2 == 0:
        raise ValueError("composite Simpson needs an odd number of points >= 3")
    w = np.ones(G)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * (G - 1))


def eta_consistency_check(N: int = 16, points: int = 4096, d=None) -> float:
    """``max_n |(1 - lam_n) <eta, f_n> - d_n|`` with composite Simpson on ``points`` intervals."""
    if points < 512:
        raise ValueError("use at least 512 quadrature points")
    points += points % 2
    xi = np.linspace(0.0, 1.0, points + 1)
    coeffs = cosine_basis(N, xi) @ (simpson_weights(points + 1) * eta(xi))
    if d is None:
        d = heat_perturbation_coefficients(N)
    d = np.asarray(getattr(d, "coefficients", d), dtype=float)
    return float(np.abs((1.0 - heat_eigenvalues(N)) * coeffs - d).max())


# -- finite-difference oracle ------------------------------------------------------

@dataclass(frozen=True)
class FDGrid:
    G: int = 401
    dt: float = 1e-4
    scheme: str = "trapezoidal"

    def __post_init__(self):
        if self.G < 16:
            raise ValueError("FD grid needs G >= 16")
        if self.G % 2 == 0:
            raise ValueError("G must be odd (Simpson projection)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in ("trapezoidal", "implicit_euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def dx(self):
        return 1.0 / (self.G - 1)

    @property
    def nodes(self):
        return np.linspace(0.0, 1.0, self.G)


def fd_simulate(spec: HeatSystemSpec, grid: FDGrid, z0, tau: Optional[float] = None,
                periods: int = 5, overflow: float = 1e12) -> Trajectory:
    """Finite differences for the rod, projected onto the first ``N`` cosine modes.

    Ghost nodes give second-order Neumann conditions.  The flux at xi = 1 is
    frozen to ``F z(., k tau)`` over each period; the flux at xi = 0 equals
    ``c H z(., t)`` and is folded into the implicit solve.  Functionals act
    through their representers ``sum_n F_n f_n`` with Simpson weights.
    """
    tau = spec.tau if tau is None else tau
    G, dx = grid.G, grid.dx
    xi = grid.nodes
    z = np.asarray(z0(xi) if callable(z0) else z0, dtype=float).copy()
    if z.size != G:
        raise ValueError(f"z0 must have {G} samples")
    steps = max(1, int(round(tau / grid.dt)))
    dt = tau / steps

    main = np.full(G, -2.0)
    off = np.ones(G - 1)
    L = np.diag(main) + np.diag(off, 1) + np.diag(off, -1)
    L[0, 1] = 2.0
    L[-1, -2] = 2.0
    L /= dx**2
    quad = simpson_weights(G)
    basis = cosine_basis(spec.N, xi)
    project = basis * quad[None, :]
    F_row = spec.feedback.coefficients @ project
    H_row = spec.c * (spec.boundary_functional.coefficients @ project)
    A = L.copy()
    A[0] -= 2.0 / dx * H_row
    forcing = np.zeros(G)
    forcing[-1] = 2.0 / dx

    eye = np.eye(G)
    if grid.scheme == "trapezoidal":
        lu = scipy.linalg.lu_factor(eye - 0.5 * dt * A)
        rhs = eye + 0.5 * dt * A
    else:
        lu = scipy.linalg.lu_factor(eye - dt * A)
        rhs = eye

    coeffs = [project @ z]
    for k in range(periods):
        u = F_row @ z
        for _ in range(steps):
            z = scipy.linalg.lu_solve(lu, rhs @ z + dt * u * forcing)
        if not np.linalg.norm(z) * np.sqrt(dx) <= overflow:
            raise OracleDivergenceError(f"finite-difference state blew up in period {k + 1}")
        coeffs.append(project @ z)
    times = tau * np.arange(periods + 1)
    return Trajectory(times, np.array(coeffs), tau, 1, "", 2.0)


# -- admissibility probe ------------------------------------------------------

@dataclass(frozen=True)
class AdmissibilityReport:
    ladder: tuple
    norms: np.ndarray
    growth: np.ndarray
    threshold: float
    p: float
    t1: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.growth < self.threshold))

    def as_dict(self):
        return {
            "ladder": list(self.ladder),
            "p": self.p,
            "t1": self.t1,
            "threshold": self.threshold,
            "max_growth": float(self.growth.max()),
            "passed": self.passed,
        }


def _trig_response(lam, omega, phase, t1):
    """``int_0^t1 exp(lam (t1 - s)) cos(omega s + phase) ds`` for a vector of rates."""
    if omega == 0.0:
        return np.cos(phase) * t1 * phi1(lam * t1)
    iw = 1j * omega
    val = np.exp(1j * phase) * (np.exp(iw * t1) - np.exp(lam * t1)) / (iw - lam)
    return val.real


def _singular_response(lam, beta, t1):
    """``int_0^t1 exp(lam u) u^(-beta) du``."""
    lam = np.asarray(lam, dtype=float)
    out = np.empty_like(lam)
    a = 1.0 - beta
    neg = lam < 0
    ln = -lam[neg]
    out[neg] = ln ** (-a) * scipy.special.gamma(a) * scipy.special.gammainc(a, ln * t1)
    nonneg = ~neg
    out[nonneg] = t1**a / a * scipy.special.hyp1f1(a, a + 1.0, lam[nonneg] * t1)
    return out


def admissibility_probe(gen: DiagonalGenerator, d, p: float, t1: float = 0.1, trials: int = 10,
                        ladder: Sequence[int] = (32, 64, 128, 256), seed: int = 0,
                        threshold: float = 1e-2, harmonics: int = 6,
                        singular: bool = True) -> AdmissibilityReport:
    """Numerical evidence that ``int_0^t1 T_{-1}(t1 - s) d w(s) ds`` stays in ``l^q``.

    Each trial draws ``w`` as a random trigonometric polynomial on ``[0, t1]``
    plus, when ``singular`` is set, a term ``(t1 - s)^(-beta)`` with
    ``beta p`` uniform in [0.6, 0.9] (so ``w`` is in ``L^p``, but barely);
    ``w`` is scaled to unit ``L^p`` norm.  Smooth signals alone cannot expose
    a non-admissible direction whose response decays like ``1/|lam_n|``.
    The response is evaluated per mode in closed form, and its ``l^q`` norm
    is recorded for every truncation in ``ladder``.  A trial passes if the
    norm grows by less than ``threshold`` (relative) between the two
    largest truncations.
    """
    if trials < 10:
        raise ValueError("use at least 10 trials")
    ladder = tuple(sorted(int(n) for n in ladder))
    if ladder[-1] > gen.N:
        raise ValueError(f"ladder reaches {ladder[-1]} modes but the generator has N={gen.N}")
    dvec = np.asarray(getattr(d, "coefficients", d), dtype=float)[: ladder[-1]]
    lam = gen.eigenvalues[: ladder[-1]]
    rng = np.random.default_rng(seed)
    norms = np.zeros((trials, len(ladder)))
    for k in range(trials):
        amps = rng.standard_normal(harmonics + 1) / (1.0 + np.arange(harmonics + 1))
        phases = rng.uniform(0.0, 2.0 * np.pi, harmonics + 1)
        freqs = 2.0 * np.pi * np.arange(harmonics + 1) / t1
        sing_amp = rng.uniform(0.5, 1.0) * rng.choice([-1.0, 1.0]) if singular else 0.0
        beta = rng.uniform(0.6, 0.9) / p

        def w(s):
            val = sum(a * np.cos(f * s + ph) for a, f, ph in zip(amps, freqs, phases))
            if singular:
                val = val + sing_amp * np.maximum(t1 - s, 1e-300) ** (-beta)
            return val

        lp, _ = scipy.integrate.quad(lambda s: abs(w(s)) ** p, 0.0, t1, limit=400)
        scale = lp ** (-1.0 / p)
        response = sum(a * _trig_response(lam, f, ph, t1) for a, f, ph in zip(amps, freqs, phases))
        if singular:
            response = response + sing_amp * _singular_response(lam, beta, t1)
        v = scale * dvec * response
        norms[k] = [np.linalg.norm(v[:n], gen.q) for n in ladder]
    with np.errstate(invalid="ignore", divide="ignore"):
        growth = np.where(norms[:, -2] > 0, (norms[:, -1] - norms[:, -2]) / norms[:, -2], 0.0)
    return AdmissibilityReport(ladder, norms, growth, float(threshold), float(p), float(t1))
