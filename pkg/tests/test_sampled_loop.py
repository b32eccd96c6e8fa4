import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from conftest import scalar_system
from sdrobust.errors import DimensionError, DomainError, InstabilityError, ResolventDomainError
from sdrobust.heat import HeatSystemSpec, build_heat_system
from sdrobust.perturbation import build_perturbed_matrix
from sdrobust.sampled_loop import (
    closed_loop,
    hold_nominal,
    hold_nominal_via_resolvent,
    hold_perturbed,
    hold_perturbed_via_resolvent,
    perturbed_transition,
    simulate,
)
from sdrobust.stability import spectral_radius


def heat(N, c):
    return build_heat_system(HeatSystemSpec(N=N, c=c))


def test_system_invariants():
    with pytest.raises(DomainError):
        scalar_system(tau=0.0)
    with pytest.raises(DomainError):
        scalar_system(omega=-1.0)
    sys = heat(4, 0.1)
    with pytest.raises(DimensionError):
        type(sys)(sys.gen, sys.B, type(sys.F)([1.0]), 0.1)


def test_hold_nominal_examples():
    sys = scalar_system(lam=0.0)
    assert hold_nominal(sys, 0.0).coefficients[0] == 0.0
    assert hold_nominal(sys, 0.3).coefficients[0] == pytest.approx(0.3, rel=1e-15)
    sys = scalar_system(lam=-1.0)
    assert hold_nominal(sys, np.log(2.0)).coefficients[0] == pytest.approx(0.5, rel=1e-15)


def test_hold_nominal_series_branch():
    sys = scalar_system(lam=-1e-3)
    t = 1e-6
    exact = (np.expm1(-1e-3 * t)) / -1e-3
    assert hold_nominal(sys, t).coefficients[0] == pytest.approx(exact, rel=1e-15)


def test_hold_nominal_via_resolvent_examples():
    sys = scalar_system(lam=-1.0)
    assert hold_nominal_via_resolvent(sys, 0.0).coefficients[0] == 0.0
    assert hold_nominal_via_resolvent(sys, np.log(2.0), 1.0).coefficients[0] == pytest.approx(0.5, rel=1e-14)
    sys = heat(16, 0.0)
    a = hold_nominal(sys, 0.05).coefficients
    b = hold_nominal_via_resolvent(sys, 0.05, 1.0).coefficients
    assert np.abs(a - b).max() <= 1e-11
    with pytest.raises(ResolventDomainError):
        hold_nominal_via_resolvent(sys, 0.05, 0.0)


def test_hold_perturbed_examples():
    sys = heat(8, 0.0)
    for t in (0.0, 0.01, 0.05):
        np.testing.assert_array_equal(hold_perturbed(sys, t).coefficients, hold_nominal(sys, t).coefficients)
    sys = scalar_system(lam=0.0, d=-1.0, h=1.0, c=0.5)
    assert hold_perturbed(sys, 2.0).coefficients[0] == pytest.approx((1 - np.exp(-1.0)) / 0.5, rel=1e-14)
    assert hold_perturbed_via_resolvent(sys, 2.0, 1.0).coefficients[0] == pytest.approx((1 - np.exp(-1.0)) / 0.5,
                                                                                         rel=1e-13)


def test_hold_perturbed_against_simpson():
    sys = heat(16, 0.1)
    A = build_perturbed_matrix(sys.gen, sys.P).entries
    h, t = 1e-5, 0.05
    n = int(round(t / h))
    step = scipy.linalg.expm(A * h)
    vals = np.empty((n + 1, 16))
    vals[0] = sys.B.b.coefficients
    for k in range(n):
        vals[k + 1] = step @ vals[k]
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    ref = (h / 3.0) * (w @ vals)
    assert np.abs(hold_perturbed(sys, t).coefficients - ref).max() <= 1e-9


def test_hold_perturbed_via_resolvent_default_lambda():
    sys = heat(16, 0.1)
    a = hold_perturbed(sys, 0.05).coefficients
    b = hold_perturbed_via_resolvent(sys, 0.05).coefficients
    assert np.abs(a - b).max() <= 1e-9
    nominal = heat(16, 0.0)
    np.testing.assert_array_equal(hold_perturbed_via_resolvent(nominal, 0.03, 2.0).coefficients,
                                  hold_nominal_via_resolvent(nominal, 0.03, 2.0).coefficients)


def test_representation_equivalence_on_grid():
    sys = heat(32, 0.3)
    for t in np.linspace(0.0, sys.tau, 32):
        assert np.abs(hold_nominal(sys, t).coefficients - hold_nominal_via_resolvent(sys, t).coefficients).max() <= 1e-11
        assert np.abs(hold_perturbed(sys, t).coefficients
                      - hold_perturbed_via_resolvent(sys, t).coefficients).max() <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_hold_cocycle(c, u, v):
    sys = heat(12, c)
    t1, t2 = sorted((u * sys.tau, v * sys.tau))
    TD1, _ = perturbed_transition(sys, t1)
    lhs = hold_perturbed(sys, t2).coefficients - hold_perturbed(sys, t1).coefficients
    rhs = TD1 @ hold_perturbed(sys, t2 - t1).coefficients
    assert np.abs(lhs - rhs).max() <= 1e-10


def test_vanishing_hold():
    sys = heat(32, 0.0)
    norms = [np.abs(hold_nominal(sys, sys.tau * 2.0**-j).coefficients).max() for j in range(21)]
    assert all(b < a for a, b in zip(norms, norms[1:]))
    # |S(t) 1|_inf <= max|b| t
    assert norms[-1] <= np.abs(sys.B.b.coefficients).max() * sys.tau * 2.0**-20 * (1 + 1e-12)


def test_closed_loop_examples():
    sys = heat(6, 0.0).with_feedback(type(heat(6, 0.0).F)(np.zeros(6)))
    np.testing.assert_allclose(closed_loop(sys).entries, np.diag(np.exp(sys.gen.eigenvalues * sys.tau)),
                               rtol=1e-15, atol=1e-300)
    sys = scalar_system(lam=-1.0, F=-1.0, tau=np.log(2.0))
    assert abs(closed_loop(sys).entries[0, 0]) <= 1e-15
    sys = scalar_system(lam=0.0, F=-1.0, tau=1.0)
    assert closed_loop(sys).entries[0, 0] == 0.0


def test_simulate_examples(rng):
    sys = heat(8, 0.1)
    traj = simulate(sys, np.zeros(8), 5, substeps=3)
    assert not np.any(traj.states)
    sys = scalar_system(lam=0.0, F=-1.0, tau=1.0)
    traj = simulate(sys, [1.0], 6)
    assert traj.states[0, 0] == 1.0 and not np.any(traj.states[1:])


def test_simulate_boundaries_follow_closed_loop(rng):
    sys = heat(32, 0.05)
    x = rng.standard_normal(32)
    traj = simulate(sys, x, 10, substeps=4)
    delta = closed_loop(sys).entries
    assert np.all(np.diff(traj.times) > 0) and traj.times[0] == 0.0
    boundary = traj.boundary_states()
    for k in range(10):
        x = delta @ x
        assert np.abs(boundary[k + 1] - x).max() <= 1e-11 * max(1.0, np.abs(x).max())


def test_simulate_decay_matches_spectral_radius():
    sys = heat(32, 0.05)
    traj = simulate(sys, np.ones(32) / np.sqrt(32), 50)
    ratio = traj.norms[-1] / traj.norms[-2]
    r = spectral_radius(closed_loop(sys))
    assert abs(ratio - r) <= 0.02 * r


def test_simulate_overflow():
    sys = scalar_system(lam=5.0, F=0.0, tau=1.0)
    with pytest.raises(InstabilityError) as info:
        simulate(sys, [1.0], 20)
    assert info.value.period == 6
    assert info.value.trajectory.periods == 6


def test_trajectory_csv(tmp_path):
    sys = heat(20, 0.05)
    traj = simulate(sys, np.linspace(1, 0, 20), 3, substeps=2)
    path = traj.to_csv(tmp_path / "t.csv", sidecar=tmp_path / "t.txt")
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == ["time", "norm"] + [f"coeff_{i}" for i in range(16)]
    assert len(lines) == 1 + 7
    full = np.loadtxt(tmp_path / "t.txt")
    np.testing.assert_array_equal(full[:, 1:], traj.states)
    again = simulate(sys, np.linspace(1, 0, 20), 3, substeps=2).to_csv(tmp_path / "u.csv")
    assert again.read_bytes() == path.read_bytes()


def test_perturbation_off_purity():
    on = heat(16, 0.0)
    for t in (0.0, 0.02, 0.05):
        TD, s = perturbed_transition(on, t)
        np.testing.assert_array_equal(np.diag(TD), np.exp(on.gen.eigenvalues * t))
        np.testing.assert_array_equal(s, hold_nominal(on, t).coefficients)
