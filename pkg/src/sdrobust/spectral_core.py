"""Diagonal generators on truncated sequence spaces and their primitives.

A generator is stored by its (real) eigenvalues; the state space is the
first ``N`` coordinates of ``l^q``.  Everything here is exact up to rounding
because the semigroup and resolvent act componentwise.

Notation
--------
lam      : eigenvalue vector of the generator
q        : state-space exponent, 1 < q < inf
q_dual   : conjugate exponent q / (q - 1)
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, DomainError, ResolventDomainError

__all__ = [
    "DiagonalGenerator",
    "StateVector",
    "ExtrapolationVector",
    "DualFunctional",
    "BOUNDED_SEQUENCE",
    "STATE_SPACE",
    "DEFAULT_SEQUENCE_BOUND",
    "dual_exponent",
    "phi1",
    "phi2",
    "exp_convolution",
    "semigroup_apply",
    "semigroup_extended_apply",
    "resolvent_apply",
    "state_norm",
    "xminus1_norm",
    "xminus1_equivalence_bounds",
    "operator_norm",
    "operator_norm_bounds",
]

BOUNDED_SEQUENCE = "bounded_sequence"
STATE_SPACE = "state_space"
DEFAULT_SEQUENCE_BOUND = 10.0


def _frozen(values, name):
    arr = np.array(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


def dual_exponent(q):
    """Conjugate exponent ``q / (q - 1)``."""
    return q / (q - 1.0)


@dataclass(frozen=True, eq=False)
class DiagonalGenerator:
    """Truncated diagonal generator ``(A x)_n = lam_n x_n`` on ``l^q``.

    Parameters
    ----------
    eigenvalues : array_like
        Real eigenvalues, in any order, possibly repeated.
    q : float
        Exponent of the state space, ``q > 1``.
    """

    eigenvalues: np.ndarray
    q: float = 2.0

    def __post_init__(self):
        lam = _frozen(self.eigenvalues, "eigenvalues")
        if lam.size < 1:
            raise ValueError("a generator needs at least one eigenvalue")
        if not self.q > 1.0 or not np.isfinite(self.q):
            raise ValueError(f"exponent q must lie in (1, inf), got {self.q}")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "q", float(self.q))

    @property
    def N(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def spectral_bound(self) -> float:
        return float(self.eigenvalues.max())

    @property
    def q_dual(self) -> float:
        return dual_exponent(self.q)

    @property
    def tag(self) -> str:
        # content hash: two generators with equal data are interchangeable
        h = hashlib.sha1(self.eigenvalues.tobytes())
        h.update(np.float64(self.q).tobytes())
        return h.hexdigest()[:16]

    def default_resolvent_parameter(self) -> float:
        return self.spectral_bound + 1.0

    def truncate(self, n: int) -> "DiagonalGenerator":
        return DiagonalGenerator(self.eigenvalues[:n], self.q)

    def state(self, coefficients) -> "StateVector":
        return StateVector(coefficients, self.tag)

    def zeros(self) -> "StateVector":
        return self.state(np.zeros(self.N))


@dataclass(frozen=True, eq=False)
class StateVector:
    """Coefficients of a state ``x`` in the truncated ``l^q``."""

    coefficients: np.ndarray
    generator_tag: str

    def __post_init__(self):
        object.__setattr__(self, "coefficients", _frozen(self.coefficients, "state"))

    def __len__(self):
        return self.coefficients.size

    def norm(self, q=2.0):
        return state_norm(self, q)


@dataclass(frozen=True, eq=False)
class ExtrapolationVector:
    """Coefficients of an element of the extrapolation space.

    ``declared_class`` is ``"bounded_sequence"`` for genuine unbounded
    directions such as point evaluations, whose coefficients are only
    asserted to be bounded; ``"state_space"`` if the sequence already lies in
    ``l^q``.
    """

    coefficients: np.ndarray
    declared_class: str = BOUNDED_SEQUENCE
    bound: float = DEFAULT_SEQUENCE_BOUND

    def __post_init__(self):
        w = _frozen(self.coefficients, "extrapolation vector")
        if self.declared_class not in (BOUNDED_SEQUENCE, STATE_SPACE):
            raise ValueError(f"unknown declared_class {self.declared_class!r}")
        if self.declared_class == BOUNDED_SEQUENCE and w.size and np.abs(w).max() > self.bound:
            raise ValueError(
                f"coefficient magnitude {np.abs(w).max():.6g} exceeds the "
                f"configured bound {self.bound:g} for a bounded sequence"
            )
        object.__setattr__(self, "coefficients", w)

    def __len__(self):
        return self.coefficients.size


@dataclass(frozen=True, eq=False)
class DualFunctional:
    """Functional ``x -> sum_n h_n x_n`` on ``l^q``, stored by its coefficients."""

    coefficients: np.ndarray
    q: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "coefficients", _frozen(self.coefficients, "functional"))

    @property
    def dual_exponent(self) -> float:
        return dual_exponent(self.q)

    def __len__(self):
        return self.coefficients.size

    def __call__(self, x) -> float:
        coeffs = x.coefficients if isinstance(x, StateVector) else np.asarray(x, dtype=float)
        if coeffs.shape[-1] != self.coefficients.size:
            raise DimensionError("functional and state have different lengths")
        return coeffs @ self.coefficients

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients, self.dual_exponent))


# -- scalar helpers ---------------------------------------------------------

def phi1(z):
    """``(e^z - 1) / z`` with the removable singularity filled in."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0.0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out if out.ndim else float(out)


def phi2(z):
    """``(e^z - 1 - z) / z^2``; Taylor branch for ``|z| < 1e-3``."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-3
    zs = z[small]
    out[small] = 0.5 + zs / 6.0 + zs**2 / 24.0 + zs**3 / 120.0
    zl = z[~small]
    out[~small] = (np.expm1(zl) - zl) / zl**2
    return out if out.ndim else float(out)


def exp_convolution(a, b, s):
    """``int_0^s exp(a (s - r)) exp(b r) dr``, broadcasting over inputs.

    Evaluated as ``e^{max s} s phi1((min - max) s)`` so that neither factor
    overflows for widely separated rates.
    """
    a, b, s = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, s)))
    hi = np.maximum(a, b)
    lo = np.minimum(a, b)
    return np.exp(hi * s) * s * phi1((lo - hi) * s)


# -- operations ---------------------------------------------------------------

def _check_time(t):
    if not t >= 0.0:
        raise DomainError(f"time must be nonnegative, got {t}")


def _check_bound(gen, x):
    if not isinstance(x, StateVector):
        raise TypeError("expected a StateVector")
    if x.generator_tag != gen.tag or len(x) != gen.N:
        raise DimensionError("state vector is not bound to this generator")


def semigroup_apply(gen: DiagonalGenerator, t: float, x: StateVector) -> StateVector:
    """``T(t) x = (exp(lam_n t) x_n)_n``."""
    _check_time(t)
    _check_bound(gen, x)
    if t == 0.0:
        return x
    return StateVector(np.exp(gen.eigenvalues * t) * x.coefficients, gen.tag)


def semigroup_extended_apply(gen: DiagonalGenerator, t: float,
                             w: ExtrapolationVector) -> ExtrapolationVector:
    """Extension of ``T(t)`` to the extrapolation space; class is preserved."""
    _check_time(t)
    if len(w) != gen.N:
        raise DimensionError("extrapolation vector length differs from N")
    if t == 0.0:
        return w
    coeffs = np.exp(gen.eigenvalues * t) * w.coefficients
    # decay can only shrink magnitudes when lam <= 0; growth may exceed the bound
    bound = max(w.bound, float(np.abs(coeffs).max(initial=0.0)))
    return ExtrapolationVector(coeffs, w.declared_class, bound)


def _check_resolvent(gen, lam):
    if not lam > gen.spectral_bound:
        raise ResolventDomainError(
            f"resolvent parameter {lam} must exceed the spectral bound {gen.spectral_bound}"
        )


def resolvent_apply(gen: DiagonalGenerator, lam: float, w) -> StateVector:
    """``(lam I - A_{-1})^{-1} w = (w_n / (lam - lam_n))_n``.

    Accepts an :class:`ExtrapolationVector` or a :class:`StateVector`.
    """
    _check_resolvent(gen, lam)
    if len(w) != gen.N:
        raise DimensionError("vector length differs from N")
    return StateVector(w.coefficients / (lam - gen.eigenvalues), gen.tag)


def state_norm(x, q=2.0) -> float:
    """``(sum |x_n|^q)^(1/q)``."""
    coeffs = x.coefficients if hasattr(x, "coefficients") else np.asarray(x, dtype=float)
    return float(np.linalg.norm(coeffs, q))


def xminus1_norm(w, gen: DiagonalGenerator, lam: Optional[float] = None) -> float:
    """Extrapolation norm ``||(lam I - A_{-1})^{-1} w||_q``."""
    if lam is None:
        lam = gen.default_resolvent_parameter()
    return state_norm(resolvent_apply(gen, lam, w), gen.q)


def xminus1_equivalence_bounds(gen: DiagonalGenerator, lam: float, lam2: float):
    """Constants ``(m, M)`` with ``m <= |w|_{lam2} / |w|_{lam} <= M`` for all ``w``.

    Both norms are weighted ``l^q`` norms with weights ``1/(lam - lam_n)``;
    their ratio is bracketed by the extreme componentwise weight ratios.
    """
    _check_resolvent(gen, lam)
    _check_resolvent(gen, lam2)
    ratio = (lam - gen.eigenvalues) / (lam2 - gen.eigenvalues)
    return float(ratio.min()), float(ratio.max())


def operator_norm(matrix, q=2.0) -> float:
    """Induced ``l^q`` norm of a matrix.

    Exact for ``q`` in {1, 2, inf}.  Otherwise the Riesz-Thorin interpolation
    bound ``||M||_1^(1/q) ||M||_inf^(1-1/q)`` is returned, an upper bound.
    """
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if q == 2.0:
        return float(np.linalg.norm(m, 2)) if m.size else 0.0
    n1 = float(np.abs(m).sum(axis=0).max(initial=0.0))
    ninf = float(np.abs(m).sum(axis=1).max(initial=0.0))
    if q == 1.0:
        return n1
    if np.isinf(q):
        return ninf
    return n1 ** (1.0 / q) * ninf ** (1.0 - 1.0 / q)


def operator_norm_bounds(matrix, q=2.0, probes=64, rng=None):
    """Return ``(lower, upper)`` for the induced ``l^q`` norm.

    The lower bound comes from random probing followed by a few steps of the
    nonlinear power method; the upper bound from :func:`operator_norm`.
    """
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    upper = operator_norm(m, q)
    if q == 2.0:
        return upper, upper
    rng = np.random.default_rng(rng)
    qd = dual_exponent(q)
    best = 0.0
    for _ in range(probes):
        x = rng.standard_normal(m.shape[1])
        for _ in range(20):
            x /= np.linalg.norm(x, q)
            y = m @ x
            ny = np.linalg.norm(y, q)
            best = max(best, ny)
            if ny == 0.0:
                break
            z = m.T @ (np.sign(y) * np.abs(y) ** (q - 1))
            x = np.sign(z) * np.abs(z) ** (qd - 1)
            if not np.any(x):
                break
    return best, upper
