"""Rank-one boundary-type perturbations ``D = c d (x) H`` of a diagonal generator.

The perturbed semigroup is produced two independent ways:

* :func:`perturbed_semigroup_expm` exponentiates the truncated matrix
  ``diag(lam) + c d h^T``;
* :func:`perturbed_semigroup_volterra` runs the Picard iteration of the
  variation-of-constants equation
  ``Q(t) = T(t) + int_0^t T_{-1}(t - s) D Q(s) ds`` on a time grid.

The Volterra route never forms ``A_D``.  Because ``D`` has rank one the
iteration only needs the row ``h^T Q(s)``.  Its nominal part ``h^T T(s)`` is
convolved with the diagonal kernel in closed form.  The remainder is
represented by Gauss-Legendre collocation values on every step and
convolved with exact exponential product weights, so stiff modes do not
restrict the step size.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.integrate import quad_vec

from .errors import DimensionError, DivergenceError, DomainError, LambdaSearchError, ResolventDomainError
from .spectral_core import (
    DiagonalGenerator,
    DualFunctional,
    ExtrapolationVector,
    exp_convolution,
    operator_norm,
    phi1,
    phi2,
)

__all__ = [
    "RankOnePerturbation",
    "TruncatedOperator",
    "StrongOperatorPath",
    "ResolventReport",
    "build_perturbed_matrix",
    "perturbed_semigroup_expm",
    "perturbed_semigroup_volterra",
    "volterra_vcf_residual",
    "variation_of_constants_residual",
    "volterra_norm_estimate",
    "resolvent_identity_check",
    "lambda_star_search",
    "DEFAULT_STEPS_PER_UNIT_TIME",
    "DEFAULT_VOLTERRA_TOL",
    "DEFAULT_VOLTERRA_MAX_ITERS",
    "DEFAULT_CONTRACTION_HORIZON",
]

DEFAULT_STEPS_PER_UNIT_TIME = 256
DEFAULT_VOLTERRA_TOL = 1e-10
DEFAULT_VOLTERRA_MAX_ITERS = 200
DEFAULT_CONTRACTION_HORIZON = 0.1
LAMBDA_SEARCH_CAP = 1e6


@dataclass(frozen=True, eq=False)
class RankOnePerturbation:
    """``D = c D_0`` with ``D_0 x = d (h . x)``."""

    d: ExtrapolationVector
    H: DualFunctional
    c: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.c <= 1.0:
            raise ValueError(f"perturbation scale c must lie in [0, 1], got {self.c}")
        if len(self.d) != len(self.H):
            raise DimensionError("direction d and functional H have different lengths")
        object.__setattr__(self, "c", float(self.c))

    @property
    def N(self):
        return len(self.d)

    @property
    def base_tag(self) -> str:
        h = hashlib.sha1(self.d.coefficients.tobytes())
        h.update(self.H.coefficients.tobytes())
        return h.hexdigest()[:16]

    def scaled(self, c: float) -> "RankOnePerturbation":
        return RankOnePerturbation(self.d, self.H, c)

    def truncate(self, n: int) -> "RankOnePerturbation":
        d = ExtrapolationVector(self.d.coefficients[:n], self.d.declared_class, self.d.bound)
        return RankOnePerturbation(d, DualFunctional(self.H.coefficients[:n], self.H.q), self.c)


@dataclass(frozen=True, eq=False)
class TruncatedOperator:
    """Dense ``N x N`` operator on the truncated coefficient space."""

    entries: np.ndarray
    domain_tag: str
    codomain_tag: str
    q: float = 2.0

    def __post_init__(self):
        m = np.array(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("operator entries must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def N(self):
        return self.entries.shape[0]

    def norm(self) -> float:
        return operator_norm(self.entries, self.q)

    def apply(self, x):
        coeffs = getattr(x, "coefficients", x)
        return self.entries @ np.asarray(coeffs, dtype=float)


@dataclass(frozen=True, eq=False)
class StrongOperatorPath:
    """Operator samples ``Q(t_i)`` on a grid ``0 = t_0 < ... < t_M``.

    ``node_rows`` keeps the collocation values of ``h^T (Q - T)`` used by the
    Volterra solver, so the variation-of-constants residual can be
    re-evaluated with the same quadrature.
    """

    times: np.ndarray
    samples: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    node_offsets: Optional[np.ndarray] = None
    node_rows: Optional[np.ndarray] = None
    tag: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("time grid must start at 0 and increase strictly")
        if self.samples.shape[0] != t.size:
            raise DimensionError("one operator sample per grid point is required")

    def __len__(self):
        return self.times.size

    def __getitem__(self, i) -> TruncatedOperator:
        return TruncatedOperator(self.samples[i], self.tag, self.tag)


def build_perturbed_matrix(gen: DiagonalGenerator, P: RankOnePerturbation) -> TruncatedOperator:
    """Truncated ``A_D = diag(lam) + c d h^T``."""
    if P.N != gen.N:
        raise DimensionError(f"perturbation has length {P.N}, generator has N={gen.N}")
    m = np.diag(gen.eigenvalues)
    if P.c != 0.0:
        m = m + P.c * np.outer(P.d.coefficients, P.H.coefficients)
    return TruncatedOperator(m, gen.tag, gen.tag, gen.q)


def perturbed_semigroup_expm(A_D: TruncatedOperator, t: float) -> TruncatedOperator:
    """``T_D(t) = exp(t A_D)`` by scaling and squaring (scipy)."""
    if not t >= 0.0:
        raise DomainError(f"time must be nonnegative, got {t}")
    if t == 0.0:
        return TruncatedOperator(np.eye(A_D.N), A_D.domain_tag, A_D.codomain_tag, A_D.q)
    return TruncatedOperator(scipy.linalg.expm(t * A_D.entries), A_D.domain_tag,
                             A_D.codomain_tag, A_D.q)


# -- Volterra route ----------------------------------------------------------

def _lagrange_values(nodes, points):
    """Matrix ``L[i, j] = ell_j(points[i])`` for the Lagrange basis on ``nodes`` in [0, 1]."""
    deg = nodes.size - 1
    V = np.polynomial.legendre.legvander(2.0 * nodes - 1.0, deg)
    P = np.polynomial.legendre.legvander(2.0 * np.asarray(points) - 1.0, deg)
    return np.linalg.solve(V.T, P.T).T


_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


def _exp_product_weights(lam, upper, nodes, step):
    """``int_0^upper exp(lam (upper - r)) ell_j(r / step) dr`` for every basis index j.

    Integrated in ``u = upper - r``; pieces have ``|lam| * length <= 2`` and
    the range is cut where ``exp(lam u) < e^-40`` for decaying modes.
    """
    if upper == 0.0:
        return np.zeros(nodes.size)
    u_max = upper
    if lam < 0.0 and -lam * upper > 40.0:
        u_max = 40.0 / -lam
    pieces = max(1, int(np.ceil(abs(lam) * u_max / 2.0)))
    edges = np.linspace(0.0, u_max, pieces + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    u = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    wts = (half[:, None] * _GL_W[None, :]).ravel()
    basis = _lagrange_values(nodes, (upper - u) / step)
    return (wts * np.exp(lam * u)) @ basis


def _collocation_setup(lam, step, order):
    nodes = 0.5 * (np.polynomial.legendre.leggauss(order)[0] + 1.0)
    N = lam.size
    w_full = np.empty((N, order))
    w_part = np.empty((order, N, order))
    for n, ln in enumerate(lam):
        w_full[n] = _exp_product_weights(ln, step, nodes, step)
        for l, x in enumerate(nodes):
            w_part[l, n] = _exp_product_weights(ln, step * x, nodes, step)
    return nodes, w_full, w_part


def _convolve_rows(lam, step, nodes, w_full, w_part, rows, weights=None):
    """Grid values of ``Y_n(t) = int_0^t exp(lam_n (t - s)) rows(s) ds``.

    ``rows`` has shape (M, order, J).  Returns the grid array (M+1, N, J) and,
    if ``weights`` (length N) is given, the contraction ``sum_n weights_n Y_n``
    at every collocation node, shape (M, order, J).
    """
    M, order, J = rows.shape
    N = lam.size
    e_full = np.exp(lam * step)
    e_part = np.exp(np.outer(step * nodes, lam))  # (order, N)
    grid = np.zeros((M + 1, N, J))
    contracted = None
    if weights is not None:
        contracted = np.zeros((M, order, J))
        we_part = e_part * weights[None, :]
        ww_part = np.einsum("n,lnk->lk", weights, w_part)
    for i in range(M):
        if weights is not None:
            contracted[i] = we_part @ grid[i] + ww_part @ rows[i]
        grid[i + 1] = e_full[:, None] * grid[i] + w_full @ rows[i]
    return grid, contracted


def _path_norms(stack, q):
    if q == 2.0:
        return np.linalg.norm(stack, 2, axis=(1, 2))
    return np.array([operator_norm(m, q) for m in stack])


def perturbed_semigroup_volterra(gen: DiagonalGenerator, P: RankOnePerturbation,
                                 t_horizon: float, grid_size: Optional[int] = None,
                                 max_iters: int = DEFAULT_VOLTERRA_MAX_ITERS,
                                 tol: float = DEFAULT_VOLTERRA_TOL,
                                 order: int = 8) -> StrongOperatorPath:
    """Fixed point of the variation-of-constants equation on ``[0, t_horizon]``.

    Parameters
    ----------
    gen, P : generator and perturbation
    t_horizon : float
        Length of the time window, > 0.
    grid_size : int, optional
        Number of uniform steps ``M >= 8``; defaults to 256 per unit time.
    max_iters : int
        Iteration budget ``K``.
    tol : float
        Stop once ``sup_i ||Q^{k+1}(t_i) - Q^k(t_i)|| < tol``.
    order : int
        Collocation nodes per step.

    Returns
    -------
    StrongOperatorPath
        Samples on the grid, with ``iterations`` and final ``residual``.

    Raises
    ------
    DivergenceError
        If the budget is exhausted; carries the last residual.
    """
    if P.N != gen.N:
        raise DimensionError("perturbation and generator sizes differ")
    if not t_horizon > 0.0:
        raise DomainError("t_horizon must be positive")
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    if grid_size is None:
        grid_size = max(8, int(np.ceil(DEFAULT_STEPS_PER_UNIT_TIME * t_horizon)))
    if grid_size < 8:
        raise ValueError("grid_size must be at least 8")

    lam = gen.eigenvalues
    d = P.d.coefficients
    h = P.H.coefficients
    c = P.c
    M = int(grid_size)
    step = t_horizon / M
    times = step * np.arange(M + 1)
    nodes, w_full, w_part = _collocation_setup(lam, step, order)
    node_times = times[:-1, None] + step * nodes[None, :]

    semigroup = np.exp(np.outer(times, lam))
    hd = h * d

    # int_0^t e^{lam_n (t-s)} h_j e^{lam_j s} ds, in closed form
    exact_grid = h[None, None, :] * exp_convolution(lam[None, :, None], lam[None, None, :],
                                                    times[:, None, None])
    # its contraction sum_n hd_n (.) at the collocation nodes, built node by node
    exact_rows = np.empty((M, order, lam.size))
    for l in range(order):
        conv = exp_convolution(lam[None, :, None], lam[None, None, :],
                               node_times[:, l, None, None])
        exact_rows[:, l, :] = h[None, :] * np.einsum("n,inj->ij", hd, conv)

    rho = np.zeros((M, order, lam.size))
    prev = np.zeros((M + 1, lam.size, lam.size))
    residual = np.inf
    for it in range(1, max_iters + 1):
        conv_grid, conv_rows = _convolve_rows(lam, step, nodes, w_full, w_part, rho, hd)
        remainder = c * d[None, :, None] * (exact_grid + conv_grid)
        residual = float(_path_norms(remainder - prev, gen.q).max())
        rho = c * (exact_rows + conv_rows)
        prev = remainder
        if residual < tol:
            break
    else:
        raise DivergenceError(
            f"Volterra iteration did not reach tol={tol:g} in {max_iters} iterations "
            f"(last residual {residual:.3e}); the contraction may fail on this horizon",
            residual, max_iters,
        )
    samples = prev.copy()
    idx = np.arange(lam.size)
    samples[:, idx, idx] += semigroup
    # rho now holds h^T (Q - T) for the converged iterate
    return StrongOperatorPath(times, samples, it, residual, nodes * step, rho, gen.tag)


def volterra_vcf_residual(gen: DiagonalGenerator, P: RankOnePerturbation,
                          path: StrongOperatorPath, x) -> np.ndarray:
    """``||Q(t)x - T(t)x - int_0^t T_{-1}(t-s) D Q(s) x ds||_q`` on the path grid.

    The integral reuses the collocation quadrature of the solver.
    """
    if path.node_rows is None:
        raise ValueError("path carries no collocation data")
    x = np.asarray(getattr(x, "coefficients", x), dtype=float)
    lam, d, h, c = gen.eigenvalues, P.d.coefficients, P.H.coefficients, P.c
    times = path.times
    step = times[1] - times[0]
    order = path.node_offsets.size
    nodes = path.node_offsets / step
    _, w_full, w_part = _collocation_setup(lam, step, order)
    rows = path.node_rows @ x  # (M, order)
    conv, _ = _convolve_rows(lam, step, nodes, w_full, w_part, rows[:, :, None])
    exact = exp_convolution(lam[None, :, None], lam[None, None, :], times[:, None, None])
    integral = c * d[None, :] * (exact @ (h * x) + conv[:, :, 0])
    lhs = path.samples @ x - np.exp(np.outer(times, lam)) * x[None, :]
    return np.linalg.norm(lhs - integral, gen.q, axis=1)


def variation_of_constants_residual(gen: DiagonalGenerator, P: RankOnePerturbation,
                                    times, states, epsabs=1e-13, epsrel=1e-12) -> np.ndarray:
    """Residual of the variation-of-constants formula for the expm semigroup.

    For every ``t`` in ``times`` and every column ``x`` of ``states`` returns
    ``||T_D(t)x - T(t)x - int_0^t T_{-1}(t-s) D T_D(s) x ds||_q`` where ``T_D`` is
    the matrix exponential and the integral is adaptive Gauss-Kronrod.

    Returns an array of shape (len(times), n_states).
    """
    A_D = build_perturbed_matrix(gen, P).entries
    X = np.atleast_2d(np.asarray(states, dtype=float).T).T
    if X.shape[0] != gen.N:
        raise DimensionError("states must have N rows")
    lam, d, h, c = gen.eigenvalues, P.d.coefficients, P.H.coefficients, P.c
    out = np.zeros((len(times), X.shape[1]))
    for i, t in enumerate(times):
        if t == 0.0:
            continue
        lhs = scipy.linalg.expm(t * A_D) @ X - np.exp(lam * t)[:, None] * X

        def integrand(s, t=t):
            row = h @ scipy.linalg.expm(s * A_D) @ X
            return (c * d * np.exp(lam * (t - s)))[:, None] * row[None, :]

        # the kernel of stiff modes concentrates near s = t
        fast = -lam.min() if lam.min() < 0 else 1.0
        pts = [p for p in (t - 40.0 / fast, t - 4.0 / fast) if 0.0 < p < t]
        integral, _ = quad_vec(integrand, 0.0, t, epsabs=epsabs, epsrel=epsrel,
                               points=pts or None, limit=2000)
        out[i] = np.linalg.norm(lhs - integral, gen.q, axis=0)
    return out


# -- Volterra operator norm ----------------------------------------------------

def _hat_convolution(lam, knots):
    """Kernel ``K[i, n, k] = int_0^{t_i} e^{lam_n (t_i - s)} hat_k(s) ds`` for hat functions."""
    K = knots.size
    steps = np.diff(knots)
    out = np.zeros((K, lam.size, K))
    for i in range(1, K):
        hstep = steps[i - 1]
        z = lam * hstep
        left = hstep * (phi1(z) - phi2(z))  # weight of value at t_{i-1}
        right = hstep * phi2(z)              # weight of value at t_i
        out[i] = np.exp(z)[:, None] * out[i - 1]
        out[i, :, i - 1] += left
        out[i, :, i] += right
    return out


def volterra_norm_estimate(gen: DiagonalGenerator, P: RankOnePerturbation,
                           t0: float = DEFAULT_CONTRACTION_HORIZON, probe_count: int = 16,
                           knots: int = 33, seed: int = 0, ascent_steps: int = 10) -> float:
    """Heuristic lower bound for ``||V_D||`` on operator paths over ``[0, t0]``.

    Probes are separable paths ``Q(s) = phi(s) a v^T`` with ``phi`` piecewise
    linear; for those both ``||Q||_inf`` and ``||V_D Q||_inf`` are exact in
    any ``l^q`` since every sample has rank one.  Each random start is
    improved by alternating ascent (Hoelder-optimal ``a``, sign update of the
    knot values).  The value is a lower bound, not a certificate.
    """
    if not t0 > 0.0:
        raise DomainError("t0 must be positive")
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    if P.c == 0.0 or not np.any(P.d.coefficients) or not np.any(P.H.coefficients):
        return 0.0
    q, qd = gen.q, gen.q_dual
    lam, d, h = gen.eigenvalues, P.d.coefficients, P.H.coefficients
    grid = np.linspace(0.0, t0, knots)
    kernel = d[None, :, None] * _hat_convolution(lam, grid)  # (K, N, K)
    rng = np.random.default_rng(seed)

    def profile_gain(phi):
        vals = kernel @ phi  # (K, N)
        norms = np.linalg.norm(vals, q, axis=1)
        i = int(norms.argmax())
        return norms[i] / np.abs(phi).max(), i, vals[i]

    best = 0.0
    for _ in range(probe_count):
        a = rng.standard_normal(gen.N)
        phi = rng.uniform(-1.0, 1.0, knots)
        for _ in range(ascent_steps + 1):
            align = abs(h @ a) / np.linalg.norm(a, q)
            gain, i, y = profile_gain(phi)
            best = max(best, P.c * align * gain)
            # Hoelder-optimal a for the fixed functional h
            a = np.sign(h) * np.abs(h) ** (qd - 1.0)
            # sign step of the nonlinear power method for the inf -> q gain
            ny = np.linalg.norm(y, q)
            if ny == 0.0:
                break
            dual = np.sign(y) * (np.abs(y) / ny) ** (q - 1.0)
            new = np.sign(dual @ kernel[i])
            new[new == 0.0] = 1.0
            if np.array_equal(new, phi):
                break
            phi = new
    return float(best)


# -- resolvent identities ----------------------------------------------------------

@dataclass(frozen=True)
class ResolventReport:
    lam: float
    alpha: float
    identity_residual: float
    extended_residual: float
    below_lambda_star: bool

    def as_dict(self):
        return {
            "lambda": self.lam,
            "alpha": self.alpha,
            "identity_residual": self.identity_residual,
            "extended_residual": self.extended_residual,
            "below_lambda_star": self.below_lambda_star,
        }


def _alpha(gen, P, lam):
    r = P.d.coefficients / (lam - gen.eigenvalues)
    return P.c * np.linalg.norm(r, gen.q) * np.linalg.norm(P.H.coefficients, gen.q_dual), r


def resolvent_identity_check(gen: DiagonalGenerator, P: RankOnePerturbation,
                             lam: float) -> ResolventReport:
    """Compare ``(lam - A_D)^{-1}`` with ``(I - R(lam) D)^{-1} R(lam)``.

    ``alpha = ||R(lam) D||`` is evaluated in closed form for the rank-one
    operator ``x -> c r (h . x)``, ``r = R(lam) d``.  The left side is a dense
    inverse; the right side sums the Neumann series of the rank-one factor,
    ``I + K / (1 - c h.r)``.  ``extended_residual`` compares both sides on the
    extrapolation element ``d`` itself.
    """
    if not lam > gen.spectral_bound:
        raise ResolventDomainError(f"lambda={lam} must exceed the spectral bound")
    A_D = build_perturbed_matrix(gen, P).entries
    shifted = lam * np.eye(gen.N) - A_D
    try:
        direct = np.linalg.inv(shifted)
    except np.linalg.LinAlgError as exc:
        raise ResolventDomainError(f"lambda={lam} is an eigenvalue of the truncated A_D") from exc
    alpha, r = _alpha(gen, P, lam)
    h = P.H.coefficients
    denom = 1.0 - P.c * (h @ r)
    if denom == 0.0:
        raise ResolventDomainError(f"lambda={lam} is an eigenvalue of the truncated A_D")
    resolvent = 1.0 / (lam - gen.eigenvalues)
    factor = np.eye(gen.N) + P.c * np.outer(r, h) / denom
    factored = factor * resolvent[None, :]
    identity_residual = float(np.abs(direct - factored).max())
    d = P.d.coefficients
    extended = float(np.abs(np.linalg.solve(shifted, d) - factor @ r).max(initial=0.0))
    return ResolventReport(float(lam), float(alpha), identity_residual, extended, bool(alpha >= 1.0))


def lambda_star_search(gen: DiagonalGenerator, P: RankOnePerturbation,
                       cap: float = LAMBDA_SEARCH_CAP) -> float:
    """Smallest ``lam = s(A) + 2^k`` (k = 0, 1, ...) with ``||R(lam) D|| < 1``."""
    base = gen.spectral_bound
    k = 0
    lam = base + 1.0
    alpha, _ = _alpha(gen, P, lam)
    while alpha >= 1.0:
        k += 1
        lam = base + 2.0**k
        if lam > cap:
            raise LambdaSearchError(
                f"no lambda below {cap:g} gives alpha < 1 (last alpha {alpha:.4g})", lam, alpha
            )
        alpha, _ = _alpha(gen, P, lam)
    return float(lam)
