"""Zero-order-hold feedback loops: hold operators, closed-loop map, simulation.

Input space is scalar.  A loop is ``x' = (A + D) x + b u`` with
``u(t) = F x(k tau)`` on ``[k tau, (k+1) tau)``; over one period the state
moves by ``x(k tau + t) = T_D(t) x(k tau) + S_D(t) F x(k tau)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DimensionError, DomainError, InstabilityError, ResolventDomainError
from .perturbation import RankOnePerturbation, TruncatedOperator, build_perturbed_matrix, lambda_star_search
from .spectral_core import (
    DiagonalGenerator,
    DualFunctional,
    ExtrapolationVector,
    StateVector,
    phi1,
)

__all__ = [
    "ControlOperator",
    "SampledSystem",
    "Trajectory",
    "hold_nominal",
    "hold_nominal_via_resolvent",
    "hold_perturbed",
    "hold_perturbed_via_resolvent",
    "perturbed_transition",
    "closed_loop",
    "simulate",
    "OVERFLOW_NORM",
    "CSV_COEFFICIENTS",
]

OVERFLOW_NORM = 1e12
CSV_COEFFICIENTS = 16


@dataclass(frozen=True, eq=False)
class ControlOperator:
    """``B u = b u`` for a scalar input ``u``."""

    b: ExtrapolationVector

    def __len__(self):
        return len(self.b)


@dataclass(frozen=True, eq=False)
class SampledSystem:
    gen: DiagonalGenerator
    B: ControlOperator
    F: DualFunctional
    tau: float
    P: Optional[RankOnePerturbation] = None
    omega: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tau > 0.0:
            raise DomainError(f"sampling period tau must be positive, got {self.tau}")
        if not self.omega >= 0.0:
            raise DomainError(f"decay rate omega must be nonnegative, got {self.omega}")
        n = self.gen.N
        sizes = {"b": len(self.B), "F": len(self.F)}
        if self.P is not None:
            sizes["d"] = self.P.N
        bad = [k for k, v in sizes.items() if v != n]
        if bad:
            raise DimensionError(f"lengths of {', '.join(bad)} differ from N={n}")

    @property
    def N(self):
        return self.gen.N

    @property
    def c(self) -> float:
        return 0.0 if self.P is None else self.P.c

    @property
    def unperturbed(self) -> bool:
        return self.P is None or self.P.c == 0.0

    def with_scale(self, c: float) -> "SampledSystem":
        if self.P is None:
            raise ValueError("system has no perturbation to scale")
        return replace(self, P=self.P.scaled(c))

    def with_feedback(self, F: DualFunctional) -> "SampledSystem":
        return replace(self, F=F)

    def nominal(self) -> "SampledSystem":
        return self if self.P is None else self.with_scale(0.0)

    def state(self, coefficients) -> StateVector:
        return self.gen.state(coefficients)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Samples of the loop state at ``k tau + j tau / substeps``."""

    times: np.ndarray
    states: np.ndarray
    tau: float
    substeps: int
    generator_tag: str = ""
    q: float = 2.0
    norms: np.ndarray = None

    def __post_init__(self):
        if self.norms is None:
            object.__setattr__(self, "norms", _row_norms(self.states, self.q))

    @property
    def periods(self) -> int:
        return (self.times.size - 1) // self.substeps

    def boundary_states(self) -> np.ndarray:
        return self.states[:: self.substeps]

    def boundary_norms(self) -> np.ndarray:
        return self.norms[:: self.substeps]

    def to_csv(self, path, sidecar=None):
        """Write ``time, norm, coeff_0..`` (at most 16 coefficients).

        ``sidecar``, if given, receives all coefficients as whitespace
        separated text, one row per time.
        """
        ncoef = min(self.states.shape[1], CSV_COEFFICIENTS)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "norm"] + [f"coeff_{i}" for i in range(ncoef)])
            for t, nrm, x in zip(self.times, self.norms, self.states):
                writer.writerow([_fmt(t), _fmt(nrm)] + [_fmt(v) for v in x[:ncoef]])
        if sidecar is not None:
            np.savetxt(sidecar, np.column_stack([self.times, self.states]), fmt="%.17g",
                       header="time " + " ".join(f"coeff_{i}" for i in range(self.states.shape[1])))
        return Path(path)


def _row_norms(states, q):
    # rescale each row first so that |x|^q cannot underflow for tiny states
    scale = np.abs(states).max(axis=1, initial=0.0)
    safe = np.where(scale > 0.0, scale, 1.0)
    return scale * np.linalg.norm(states / safe[:, None], q, axis=1)


def _fmt(v):
    return format(float(v), ".17g")


# -- hold operators ----------------------------------------------------------

def _check_t(t):
    if not t >= 0.0:
        raise DomainError(f"time must be nonnegative, got {t}")


def hold_nominal(sys: SampledSystem, t: float) -> StateVector:
    """``S(t) 1 = (b_n (e^{lam_n t} - 1) / lam_n)_n``; ``b_n t`` for ``lam_n = 0``."""
    _check_t(t)
    lam = sys.gen.eigenvalues
    z = lam * t
    col = sys.B.b.coefficients * t * phi1(z)
    small = np.abs(z) < 1e-8
    col[small] = sys.B.b.coefficients[small] * t * (1.0 + z[small] / 2.0 + z[small] ** 2 / 6.0)
    return StateVector(col, sys.gen.tag)


def hold_nominal_via_resolvent(sys: SampledSystem, t: float, lam: Optional[float] = None) -> StateVector:
    """Smoothed representation ``(I - T(t)) r + lam int_0^t T(s) r ds`` with ``r = R(lam) b``."""
    _check_t(t)
    gen = sys.gen
    if lam is None:
        lam = gen.default_resolvent_parameter()
    if not lam > gen.spectral_bound:
        raise ResolventDomainError(f"lambda={lam} must exceed the spectral bound {gen.spectral_bound}")
    ev = gen.eigenvalues
    r = sys.B.b.coefficients / (lam - ev)
    col = -np.expm1(ev * t) * r + lam * r * t * phi1(ev * t)
    return StateVector(col, gen.tag)


def _augmented_exp(A, v, t):
    """``(e^{A t}, int_0^t e^{A s} v ds)`` from one exponential of ``[[A, v], [0, 0]] t``."""
    n = A.shape[0]
    big = np.zeros((n + 1, n + 1))
    big[:n, :n] = A
    big[:n, n] = v
    E = scipy.linalg.expm(big * t)
    return E[:n, :n], E[:n, n]


def perturbed_transition(sys: SampledSystem, t: float):
    """Pair ``(T_D(t), S_D(t) 1)`` as arrays; closed forms when unperturbed."""
    _check_t(t)
    if sys.unperturbed:
        return np.diag(np.exp(sys.gen.eigenvalues * t)), hold_nominal(sys, t).coefficients
    A_D = build_perturbed_matrix(sys.gen, sys.P).entries
    if t == 0.0:
        return np.eye(sys.N), np.zeros(sys.N)
    return _augmented_exp(A_D, sys.B.b.coefficients, t)


def hold_perturbed(sys: SampledSystem, t: float) -> StateVector:
    """``S_D(t) 1 = int_0^t (T_D)_{-1}(s) b ds``."""
    return StateVector(perturbed_transition(sys, t)[1], sys.gen.tag)


def hold_perturbed_via_resolvent(sys: SampledSystem, t: float, lam: Optional[float] = None) -> StateVector:
    """``(I - T_D(t)) v + lam int_0^t T_D(s) v ds`` with ``v = (lam - (A_D)_{-1})^{-1} b``.

    ``v`` is built from the factorisation through the unperturbed resolvent,
    ``(I - R(lam) D)^{-1} R(lam) b``; the rank-one inverse is summed as a
    geometric series.  ``lam`` defaults to the result of
    :func:`lambda_star_search`.
    """
    _check_t(t)
    if sys.unperturbed:
        return hold_nominal_via_resolvent(sys, t, lam)
    gen, P = sys.gen, sys.P
    if lam is None:
        lam = lambda_star_search(gen, P)
    if not lam > gen.spectral_bound:
        raise ResolventDomainError(f"lambda={lam} must exceed the spectral bound")
    res = 1.0 / (lam - gen.eigenvalues)
    r_b = res * sys.B.b.coefficients
    r_d = res * P.d.coefficients
    h = P.H.coefficients
    denom = 1.0 - P.c * (h @ r_d)
    if denom == 0.0:
        raise ResolventDomainError(f"lambda={lam} is an eigenvalue of the truncated A_D")
    v = r_b + P.c * r_d * (h @ r_b) / denom
    A_D = build_perturbed_matrix(gen, P).entries
    TD, integral = _augmented_exp(A_D, v, t)
    return StateVector(v - TD @ v + lam * integral, gen.tag)


def closed_loop(sys: SampledSystem) -> TruncatedOperator:
    """``Delta_D(tau) = T_D(tau) + S_D(tau) F``."""
    TD, s = perturbed_transition(sys, sys.tau)
    return TruncatedOperator(TD + np.outer(s, sys.F.coefficients), sys.gen.tag, sys.gen.tag, sys.gen.q)


def simulate(sys: SampledSystem, x0, periods: int, substeps: int = 1,
             overflow: float = OVERFLOW_NORM) -> Trajectory:
    """Sample the exact truncated solution on ``k tau + j tau / substeps``.

    Raises
    ------
    InstabilityError
        When ``||x|| > overflow``; the partial trajectory and the offending
        period are attached.
    """
    if periods < 1 or substeps < 1:
        raise ValueError("periods and substeps must be >= 1")
    x = np.asarray(getattr(x0, "coefficients", x0), dtype=float)
    if isinstance(x0, StateVector) and x0.generator_tag != sys.gen.tag:
        raise DimensionError("initial state is bound to another generator")
    if x.size != sys.N:
        raise DimensionError("initial state has the wrong length")
    F = sys.F.coefficients
    offsets = sys.tau * np.arange(1, substeps + 1) / substeps
    maps = [perturbed_transition(sys, t) for t in offsets]
    states = np.empty((periods * substeps + 1, sys.N))
    times = np.empty(periods * substeps + 1)
    states[0] = x
    times[0] = 0.0
    q = sys.gen.q
    for k in range(periods):
        u = F @ x
        base = k * substeps
        for j, (TD, s) in enumerate(maps):
            states[base + j + 1] = TD @ x + s * u
            times[base + j + 1] = k * sys.tau + offsets[j]
        x = states[base + substeps]
        nrm = np.linalg.norm(x, q)
        if not nrm <= overflow:
            stop = base + substeps + 1
            partial = Trajectory(times[:stop].copy(), states[:stop].copy(), sys.tau, substeps,
                                 sys.gen.tag, q)
            raise InstabilityError(
                f"state norm {nrm:.3e} exceeded {overflow:g} at period {k + 1}", k + 1, partial
            )
    return Trajectory(times, states, sys.tau, substeps, sys.gen.tag, q)
