from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from passive_imaging.errors import AttenuationError, FormatError, InvalidArgument
from passive_imaging.modal import (
    GeneralSystem, build_interval_modes, build_rectangle_modes, build_torus_model, damped_cos_sinc,
    entire_cos, entire_sinc, ingest_system, mode_sum, read_system_matrix, wave_green, write_system,
)


def test_single_dirichlet_mode():
    m = build_interval_modes(1, math.pi, "dirichlet")
    assert np.allclose(m.eigenvalues, [1.0])
    x = np.linspace(0.1, 3.0, 7)
    assert np.allclose(m.eigenfunctions(x)[:, 0], math.sqrt(2 / math.pi) * np.sin(x))


def test_neumann_eigenvalues():
    m = build_interval_modes(3, 1.0, "neumann")
    assert np.allclose(m.eigenvalues, [0.0, math.pi ** 2, 4 * math.pi ** 2])


@pytest.mark.parametrize("bc", ["dirichlet", "neumann"])
def test_interval_orthonormality(bc):
    m = build_interval_modes(64, math.pi, bc, n_grid=1024)
    assert np.abs(m.gram() - np.eye(64)).max() <= 1e-10


def test_torus_eigenvalues_and_scaling():
    m = build_torus_model(8, 2 * math.pi)
    assert sorted(np.round(m.eigenvalues, 12)) == [0, 1, 1, 4, 4, 9, 9, 16]
    m1 = build_torus_model(8, 1.0)
    assert np.isclose(sorted(set(np.round(m1.eigenvalues, 9)))[1], (2 * math.pi) ** 2)


def test_torus_parseval():
    m = build_torus_model(256, 2 * math.pi)
    f = np.random.default_rng(0).standard_normal(256)
    c = m.project(f)
    lhs = np.sum(m.weights * f ** 2)
    assert abs(lhs - np.sum(np.abs(c) ** 2)) / lhs <= 1e-10


def test_rectangle_eigenvalues():
    assert np.allclose(build_rectangle_modes(1, 1, math.pi, math.pi).eigenvalues, [2.0])
    assert np.allclose(build_rectangle_modes(2, 2, math.pi, math.pi).eigenvalues, [2, 5, 5, 8])
    m = build_rectangle_modes(8, 8, 1.0, 2.0)
    assert m.n_modes == 64
    assert np.all(np.diff(m.eigenvalues) >= 0)
    assert np.abs(m.gram() - np.eye(64)).max() <= 1e-10


def test_bad_arguments():
    with pytest.raises(InvalidArgument):
        build_interval_modes(0, 1.0)
    with pytest.raises(InvalidArgument):
        build_interval_modes(4, -1.0)
    with pytest.raises(InvalidArgument):
        build_interval_modes(4, 1.0, "robin")
    with pytest.raises(InvalidArgument):
        build_torus_model(7, 1.0)


@given(st.floats(-50, 50), st.floats(-5, 5))
def test_entire_functions_match_branches(z, t):
    c = float(entire_cos(z, t))
    s = float(entire_sinc(z, t))
    r = math.sqrt(abs(z))
    if abs(z * t * t) > 1e-3:
        ref_c = math.cos(t * r) if z > 0 else math.cosh(t * r)
        ref_s = (math.sin(t * r) if z > 0 else math.sinh(t * r)) / r
    else:
        ref_c, ref_s = 1 - z * t * t / 2, t * (1 - z * t * t / 6)
    assert c == pytest.approx(ref_c, rel=1e-9, abs=1e-9)
    assert s == pytest.approx(ref_s, rel=1e-9, abs=1e-9)


@given(st.floats(-4, 4), st.floats(0.05, 2.0), st.floats(-30, 30))
def test_damped_pair_without_overflow(z, a, t):
    c, s = damped_cos_sinc(z, t, a)
    damp = math.exp(-a * abs(t))
    assert float(c) == pytest.approx(float(entire_cos(z, t)) * damp, rel=1e-9, abs=1e-12)
    assert float(s) == pytest.approx(float(entire_sinc(z, t)) * damp, rel=1e-9, abs=1e-12)


def test_wave_green_causal_and_single_mode():
    m = build_interval_modes(1, math.pi)
    assert wave_green(m, 0.0, -1.0, 1.0, 1.0) == 0.0
    x = math.pi / 2  # phi_1(x)^2 = 2/pi there
    g = wave_green(m, 0.0, math.pi / 2, x, x)
    assert g == pytest.approx(2 / math.pi)


def test_wave_green_image_sum():
    # time-integrated Green function is continuous, so its mode sum converges pointwise
    m = build_interval_modes(128, math.pi)
    x, y = 1.0, 1.6
    t_end = 1.2
    ts = np.linspace(0, t_end, 6001)
    g = wave_green(m, 0.0, ts, x, y)
    integrated = np.sum(0.5 * (g[1:] + g[:-1]) * np.diff(ts))
    ref = 0.0
    for n in range(-3, 4):
        ref += 0.5 * max(0.0, t_end - abs(x - y - 2 * n * math.pi))
        ref -= 0.5 * max(0.0, t_end - abs(x + y - 2 * n * math.pi))
    assert abs(integrated - ref) <= 1e-3


def test_two_sided_kernel_is_odd():
    m = build_interval_modes(16, 3.0)
    lam = m.eigenvalues
    t = np.linspace(0.1, 4, 9)[:, None]
    s_pos = mode_sum(m, entire_sinc(lam, t), 0.7, 2.1)
    s_neg = mode_sum(m, entire_sinc(lam, -t), 0.7, 2.1)
    assert np.allclose(s_pos, -s_neg, atol=1e-14)


def test_general_system_margin():
    sys = GeneralSystem.from_matrix(0.3 * np.eye(2) + 1j * np.diag([1.0, 2.0]))
    assert sys.margin == pytest.approx(0.3)
    with pytest.raises(AttenuationError):
        GeneralSystem.from_matrix(np.diag([1.0, -0.1]))
    rng = np.random.default_rng(3)
    G = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    A = 0.5 * (G + G.conj().T)
    assert GeneralSystem.from_matrix(1j * A + 0.2 * np.eye(16)).margin == pytest.approx(0.2, abs=1e-10)
    with pytest.raises(FormatError):
        GeneralSystem.from_matrix(np.ones((2, 3)))


def _random_system(seed, n=6, margin=0.4):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return GeneralSystem.from_matrix(G + (margin - np.linalg.eigvals(G).real.min()) * np.eye(n))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 3), st.floats(0, 3))
def test_semigroup_law(seed, t, s):
    sys = _random_system(seed)
    lhs = sys.propagator(t + s)
    rhs = sys.propagator(t) @ sys.propagator(s)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(1.0, np.linalg.norm(lhs))


def test_measured_decay_rate():
    sys = _random_system(5, n=8, margin=0.5)
    ts = np.linspace(0, 20 / sys.margin, 200)
    norms = np.array([np.linalg.norm(sys.propagator(t), 2) for t in ts])
    late = ts > 5 / sys.margin
    slope = np.polyfit(ts[late], np.log(norms[late]), 1)[0]
    assert -slope >= 0.9 * sys.margin


def test_defective_matrix_falls_back_to_expm():
    sys = GeneralSystem.from_matrix([[1.0, 1.0], [0.0, 1.0]])
    assert not sys.diagonalizable
    t = 0.8
    assert np.allclose(sys.propagator(t), math.exp(-t) * np.array([[1, -t], [0, 1]]))


def test_system_file_roundtrip(tmp_path):
    H = _random_system(1, n=5).matrix
    path = tmp_path / "sys.txt"
    write_system(path, H)
    assert np.array_equal(read_system_matrix(path), H)
    assert ingest_system(path).n == 5


@pytest.mark.parametrize("text", ["", "x\n", "2\n1 2\n", "2\n1 2\n3\n", "1\nfoo\n"])
def test_malformed_system_files(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(FormatError):
        read_system_matrix(path)
