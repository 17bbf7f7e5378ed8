from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from passive_imaging.correlation import lyapunov_pi
from passive_imaging.dynamics import (
    Trajectory, _van_loan, mode_step_covariance, mode_transition, propagator_kernel, simulate_first_order,
    simulate_wave, step_noise_covariance, wave_first_order_system,
)
from passive_imaging.errors import InvalidArgument, ResolutionError
from passive_imaging.modal import GeneralSystem, build_interval_modes, wave_green
from passive_imaging.noise import NoiseSpec


def batch_stderr(x, batches=20):
    means = np.array([b.mean() for b in np.array_split(x, batches)])
    return means.std(ddof=1) / math.sqrt(batches)


def random_system(seed, n, margin):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n))
    return GeneralSystem.from_matrix(G + (margin - np.linalg.eigvals(G).real.min()) * np.eye(n))


def test_propagator_kernel():
    sys = GeneralSystem.from_matrix(np.diag([1.0, 2.0]))
    assert np.allclose(propagator_kernel(sys, 0.0).matrix, np.eye(2))
    assert np.allclose(propagator_kernel(sys, 1.0).matrix, np.diag([math.exp(-1), math.exp(-2)]))
    s8 = random_system(2, 8, 0.3)
    lhs = propagator_kernel(s8, 0.7).compose(propagator_kernel(s8, 0.3)).matrix
    assert np.linalg.norm(lhs - s8.propagator(1.0)) <= 1e-10
    with pytest.raises(InvalidArgument):
        propagator_kernel(s8, -1.0)


# ---------------------------------------------------------------------------
# wave equation
# ---------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 50.0), st.floats(0.01, 2.0), st.floats(1e-3, 0.5))
def test_mode_step_covariance_matches_van_loan(lam, a, dt):
    A = np.array([[-a, 1.0], [-(lam - a * a), -a]])
    ref = _van_loan(A, np.diag([0.0, 1.0]), dt)
    got = mode_step_covariance(lam, a, dt)
    assert np.abs(got - ref).max() <= 1e-9 * max(1.0, np.abs(ref).max())


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 50.0), st.floats(0.0, 2.0), st.floats(1e-3, 1.0))
def test_mode_transition_is_exponential(lam, a, dt):
    import scipy.linalg
    A = np.array([[-a, 1.0], [-(lam - a * a), -a]])
    assert np.allclose(mode_transition(lam, a, dt), scipy.linalg.expm(A * dt), atol=1e-12)


def test_zero_noise_zero_initial_is_zero():
    m = build_interval_modes(8, 5.0)
    traj = simulate_wave(m, 0.2, NoiseSpec.white(), [1.0, 2.0], 0.01, 5.0, seed=0, noise_scale=0.0)
    assert not np.any(traj.samples)


def test_impulse_response_matches_green():
    m = build_interval_modes(16, 4.0)
    a = 0.15
    y, x = 1.3, 2.9
    kick = m.eigenfunctions(np.array([y]))[0]
    traj = simulate_wave(m, a, NoiseSpec.white(), [x], 0.01, 20.0, seed=0, noise_scale=0.0,
                         burn_in=0.0, initial=(np.zeros(16), kick))
    t = np.arange(traj.steps) * traj.dt
    ref = wave_green(m, a, t, x, y)
    assert np.abs(traj.probe(0) - ref).max() <= 1e-8


def test_single_mode_stationary_variance():
    m = build_interval_modes(1, math.pi / 2)  # lambda = 4
    a = 0.1
    traj = simulate_wave(m, a, NoiseSpec.white(), [math.pi / 4], 0.01, 2e4, seed=1)
    phi2 = float(m.eigenfunctions(np.array([math.pi / 4]))[0, 0]) ** 2
    var = traj.probe(0).var()
    assert abs(var - phi2 / (4 * a * 4.0)) / (phi2 / (4 * a * 4.0)) <= 0.05


def test_wave_determinism_and_threads():
    m = build_interval_modes(12, 6.0)
    spec = NoiseSpec.white(channels=2)
    a = simulate_wave(m, 0.3, spec, [1.0, 4.0], 0.01, 20.0, seed=4)
    b = simulate_wave(m, 0.3, spec, [1.0, 4.0], 0.01, 20.0, seed=4, threads=3)
    assert np.array_equal(a.samples, b.samples)
    assert a.samples.shape == (2000, 2, 2)


def test_twisted_channels_have_covariance_K0():
    m = build_interval_modes(4, 2.0)
    L0 = np.array([[1.0, 0.0], [0.8, 0.6]])
    traj = simulate_wave(m, 0.5, NoiseSpec.twisted(L0), [0.7], 0.01, 2000.0, seed=3)
    u = traj.samples[:, 0, :]
    C = u.T @ u / u.shape[0]
    corr = C[0, 1] / math.sqrt(C[0, 0] * C[1, 1])
    assert corr == pytest.approx(0.8, abs=0.05)


def test_wave_preconditions():
    m = build_interval_modes(64, 1.0)
    with pytest.raises(InvalidArgument, match="stationarity requires damping"):
        simulate_wave(m, 0.0, NoiseSpec.white(), [0.5], 1e-4, 1.0, seed=0)
    with pytest.raises(ResolutionError):
        simulate_wave(m, 0.1, NoiseSpec.white(), [0.5], 0.01, 1.0, seed=0)


def test_wave_stationarity_halves():
    m = build_interval_modes(16, 10.0)
    traj = simulate_wave(m, 0.2, NoiseSpec.white(), [3.3], 0.01, 4000.0, seed=6)
    u = traj.probe(0)
    first, second = u[: u.size // 2], u[u.size // 2:]
    se = math.hypot(batch_stderr(first), batch_stderr(second))
    assert abs(first.mean() - second.mean()) <= 3 * se


def test_free_decay_rate():
    m = build_interval_modes(8, 3.0)
    a = 0.2
    init = (np.linspace(1, 0.2, 8), np.zeros(8))
    traj = simulate_wave(m, a, NoiseSpec.white(), np.linspace(0.2, 2.8, 7), 0.01, 40.0, seed=0,
                         noise_scale=0.0, burn_in=0.0, initial=init)
    t = np.arange(traj.steps) * traj.dt
    env = np.array([np.abs(traj.samples[i: i + 500]).max() for i in range(0, traj.steps - 500, 500)])
    slope = np.polyfit(t[:-500:500][: env.size], np.log(env), 1)[0]
    assert -slope >= 0.9 * a


def test_trajectory_roundtrip(tmp_path):
    m = build_interval_modes(4, 2.0)
    traj = simulate_wave(m, 0.5, NoiseSpec.white(), [0.5, 1.5], 0.02, 4.0, seed=2)
    traj.save(tmp_path / "t")
    back = Trajectory.load(tmp_path / "t")
    assert np.array_equal(back.samples, traj.samples)
    assert back.dt == traj.dt and back.seed == 2
    with pytest.raises(InvalidArgument):
        Trajectory(np.zeros(1), 0.1, np.zeros((3, 1)))


# ---------------------------------------------------------------------------
# first-order systems
# ---------------------------------------------------------------------------

def test_zero_forcing_decays():
    sys = random_system(1, 4, 0.5)
    traj = simulate_first_order(sys, np.zeros((4, 4)), 0.05, 40.0, seed=0, initial=np.ones(4), burn_in=0.0)
    u = traj.samples[:, :, 0]
    assert np.abs(u[0]).max() == pytest.approx(1.0)
    assert np.abs(u[-1]).max() <= 1e-6


def test_scalar_ou_variance():
    k = 0.5
    sys = GeneralSystem.from_matrix([[k]])
    traj = simulate_first_order(sys, [[1.0]], 0.05, 1e4 / k, seed=3)
    assert abs(traj.probe(0).var() - 1 / (2 * k)) * 2 * k <= 0.05


def test_empirical_covariance_matches_lyapunov():
    sys = random_system(7, 4, 0.5)
    rng = np.random.default_rng(8)
    B = rng.standard_normal((4, 4))
    L = B @ B.T
    traj = simulate_first_order(sys, L, 0.05, 2e4, seed=9)
    u = traj.samples[:, :, 0]
    emp = u.T @ u / u.shape[0]
    Pi = lyapunov_pi(sys, L).real
    assert np.linalg.norm(emp - Pi) / np.linalg.norm(Pi) <= 0.05


def test_halving_dt_has_no_bias():
    sys = random_system(7, 3, 0.5)
    L = np.eye(3)
    covs, ses = [], []
    for dt in (0.2, 0.1):
        u = simulate_first_order(sys, L, dt, 2e4, seed=11).probe(0)
        covs.append(np.mean(u ** 2))
        ses.append(batch_stderr(u ** 2))
    assert abs(covs[0] - covs[1]) <= 3 * math.hypot(*ses)


def test_step_covariance_routes_agree():
    sys = random_system(3, 5, 0.2)
    rng = np.random.default_rng(0)
    B = rng.standard_normal((5, 5))
    L = B @ B.T
    H = sys.matrix
    n = 5
    M = np.zeros((2 * n, 2 * n), dtype=complex)
    M[:n, :n] = H
    M[:n, n:] = L
    M[n:, n:] = -H.conj().T
    import scipy.linalg
    E = scipy.linalg.expm(M * 0.3)
    ref = E[n:, n:].conj().T @ E[:n, n:]
    assert np.allclose(step_noise_covariance(sys, L, 0.3), ref, atol=1e-12)


def test_defective_system_simulates():
    sys = GeneralSystem.from_matrix([[1.0, 1.0], [0.0, 1.0]])
    assert not sys.diagonalizable
    traj = simulate_first_order(sys, np.eye(2), 0.05, 2000.0, seed=2)
    u = traj.samples[:, :, 0]
    emp = u.T @ u / u.shape[0]
    Pi = lyapunov_pi(sys, np.eye(2)).real
    assert np.linalg.norm(emp - Pi) / np.linalg.norm(Pi) <= 0.1


def test_covariance_validation():
    sys = random_system(1, 2, 0.5)
    with pytest.raises(InvalidArgument):
        simulate_first_order(sys, [[1.0, 2.0], [0.0, 1.0]], 0.1, 1.0, seed=0)
    with pytest.raises(InvalidArgument):
        simulate_first_order(sys, [[-1.0, 0.0], [0.0, 1.0]], 0.1, 1.0, seed=0)


def test_wave_first_order_system_structure():
    m = build_interval_modes(3, 2.0)
    sys, L = wave_first_order_system(m, 0.3)
    assert sys.n == 6
    assert sys.margin == pytest.approx(0.3)
    # single-mode stationary variance from the first-order route
    Pi = lyapunov_pi(sys, L).real
    assert np.allclose(np.diag(Pi)[:3], 1 / (4 * 0.3 * m.eigenvalues))
