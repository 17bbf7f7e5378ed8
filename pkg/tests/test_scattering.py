from __future__ import annotations

import csv
import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings, strategies as st

from passive_imaging.errors import InvalidArgument
from passive_imaging.scattering import (
    ScatterSetup, bessel_j0, bessel_j0_j1, elastic_correlation_tensor, elastic_green_im,
    elastic_identity_residual, free_green_im, gamma_d, plane_wave_correlation, scatter_identity_residual,
    scatter_identity_table, sphere_nodes, sphere_volume, spherical_j0,
)

J0_FIRST_ZERO = 2.404825557695773


def test_sphere_volumes():
    assert sphere_volume(1) == pytest.approx(2)
    assert sphere_volume(2) == pytest.approx(2 * math.pi)
    assert sphere_volume(3) == pytest.approx(4 * math.pi)


def test_gamma_constants():
    assert gamma_d(3, 1.0) == pytest.approx(4 * math.pi)
    for k in (0.3, 1.0, 7.0):
        assert gamma_d(2, k) == pytest.approx(4.0)
        assert gamma_d(3, k) == pytest.approx(4 * math.pi / k)
    with pytest.raises(InvalidArgument):
        gamma_d(3, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 60.0))
def test_bessel_against_scipy(x):
    j0, j1 = bessel_j0_j1(x)
    assert j0 == pytest.approx(scipy.special.j0(x), abs=1e-13)
    assert j1 == pytest.approx(scipy.special.j1(x), abs=1e-13)
    assert float(spherical_j0(x)) == pytest.approx(scipy.special.spherical_jn(0, x), abs=1e-14)


def test_plane_wave_special_values():
    s3, s2 = ScatterSetup(3, 1.0), ScatterSetup(2, 1.0)
    assert float(plane_wave_correlation(s3, 0.0)) == pytest.approx(1.0, abs=1e-14)
    assert float(plane_wave_correlation(s2, 0.0)) == pytest.approx(1.0, abs=1e-14)
    assert abs(float(plane_wave_correlation(s3, math.pi))) <= 1e-10
    assert abs(float(plane_wave_correlation(s2, J0_FIRST_ZERO))) <= 1e-8


def test_free_green_special_values():
    s3 = ScatterSetup(3, 2.0)
    assert float(free_green_im(s3, 1e-9)) == pytest.approx(2.0 / (4 * math.pi), rel=1e-12)
    assert float(free_green_im(ScatterSetup(3, math.pi / 2), 1.0)) == pytest.approx(1 / (4 * math.pi), rel=1e-12)
    assert float(free_green_im(ScatterSetup(2, 3.0), 0.0)) == pytest.approx(0.25, rel=1e-14)


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("k", [0.5, 1.0, 4.0])
def test_identity_residual_small(d, k):
    r = np.linspace(0, 10, 201)
    assert scatter_identity_residual(ScatterSetup(d, k), r) <= 1e-10


@pytest.mark.parametrize("d", [2, 3])
def test_scaling_covariance(d):
    r = np.linspace(0, 8, 81)
    a = scatter_identity_table(ScatterSetup(d, 1.5), r)
    b = scatter_identity_table(ScatterSetup(d, 3.0), r / 2)
    assert np.allclose(a.lhs, b.lhs, atol=1e-12)
    assert np.allclose(a.rhs, b.rhs, atol=1e-12)


@pytest.mark.parametrize("d", [2, 3])
def test_quadrature_order_invariance(d):
    r = np.linspace(0, 10, 101)
    ref = plane_wave_correlation(ScatterSetup(d, 1.0, order=64), r)
    for order in (96, 128, 200):
        assert np.abs(plane_wave_correlation(ScatterSetup(d, 1.0, order=order), r) - ref).max() <= 1e-12


def test_setup_validation():
    with pytest.raises(InvalidArgument):
        ScatterSetup(4, 1.0)
    with pytest.raises(InvalidArgument):
        ScatterSetup(3, -1.0)
    with pytest.raises(InvalidArgument):
        ScatterSetup(3, 1.0, a=0.0)
    with pytest.raises(InvalidArgument):
        ScatterSetup(3, 1.0, order=8)


def test_residual_csv(tmp_path):
    t = scatter_identity_table(ScatterSetup(2, 1.0), np.linspace(0, 3, 7))
    t.to_csv(tmp_path / "res.csv")
    with open(tmp_path / "res.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["d", "k", "r", "lhs", "rhs", "residual"]
    assert len(rows) == 8
    assert float(rows[3][5]) == t.residual[2]


# ---------------------------------------------------------------------------
# elasticity
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("d", [2, 3])
def test_node_completeness(d):
    dirs, w, tang = sphere_nodes(d, 64)
    assert w.sum() == pytest.approx(sphere_volume(d), rel=1e-13)
    PP = dirs[:, :, None] * dirs[:, None, :]
    PS = np.einsum("njd,nje->nde", tang, tang)
    assert np.abs(PP + PS - np.eye(d)).max() <= 1e-14
    assert elastic_correlation_tensor(ScatterSetup(d, 1.0, 1.3, 0.7, order=64), np.zeros(d)).completeness <= 1e-14


@pytest.mark.parametrize("d", [2, 3])
def test_elastic_identity(d):
    s = ScatterSetup(d, 2.0, a=1.3, b=0.7, order=64)
    rng = np.random.default_rng(d)
    seps = [np.zeros(d)] + [rng.normal(size=d) * 2 for _ in range(6)]
    assert elastic_identity_residual(s, seps) <= 1e-10


@pytest.mark.parametrize("d", [2, 3])
def test_elastic_at_origin_is_hermitian_psd(d):
    s = ScatterSetup(d, 2.0, a=1.3, b=0.7, order=64)
    T = elastic_correlation_tensor(s, np.zeros(d)).tensor
    assert np.allclose(T, T.conj().T, atol=1e-14)
    assert np.linalg.eigvalsh(T).min() >= 0
    # isotropy at the origin
    assert np.allclose(T, T[0, 0] * np.eye(d), atol=1e-12)


@pytest.mark.parametrize("d", [2, 3])
def test_elastic_b_zero_reduces_to_scalar(d):
    s = ScatterSetup(d, 1.5, a=1.0, b=0.0, order=64)
    r = np.array([0.7, -0.4, 1.1][:d])
    T = elastic_correlation_tensor(s, r).tensor / sphere_volume(d)
    scalar = float(plane_wave_correlation(ScatterSetup(d, 1.5, order=64), np.linalg.norm(r)))
    assert np.allclose(T, scalar * np.eye(d), atol=1e-12)


def test_elastic_axis_degeneracy():
    s = ScatterSetup(3, 2.0, a=1.3, b=0.7, order=64)
    T = elastic_correlation_tensor(s, np.array([0.0, 0.0, 1.7])).tensor
    ev = np.linalg.eigvalsh(0.5 * (T + T.conj().T))
    distinct = np.unique(np.round(ev, 10))
    assert distinct.size <= 2
    G = elastic_green_im(s, np.array([0.0, 0.0, 1.7]))
    assert np.allclose(G[:2, :2], G[0, 0] * np.eye(2), atol=1e-14)


def test_elastic_separation_shape():
    with pytest.raises(InvalidArgument):
        elastic_correlation_tensor(ScatterSetup(3, 1.0), np.zeros(2))


def test_bessel_j0_vectorized():
    x = np.linspace(0, 30, 301)
    assert np.abs(bessel_j0(x) - scipy.special.j0(x)).max() <= 1e-13
