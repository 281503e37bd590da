"""Torus Fourier fields and the projected calculus on the physical slope."""

import math

import numpy as np
import pytest

from qphom.fields import (
    CollocationGrid,
    FieldError,
    FourierField,
    default_grid_points,
    dot_product,
    ergodic_average,
    ergodic_mode_bound,
    field_inner,
    green_identity_residual,
    pointwise_product,
    projected_divergence,
    projected_gradient,
    slice_sample,
    subspace_split,
    torus_mean,
)
from qphom.projection import builtin_matrices, new_projection

FIB = builtin_matrices()["fibonacci"]


def random_matrix(m, n, seed):
    rng = np.random.default_rng(seed)
    return new_projection(rng.standard_normal((m, n)))


# -- field construction and invariants ---------------------------------------


def test_from_terms_matches_closed_form():
    u = FourierField.from_terms(2, 3, [(2.0, (0, 0), "cos"), (0.5, (1, 1), "cos"),
                                       (0.25, (2, -1), "sin")])
    pts = np.array([[0.1, 0.7], [0.3, 0.2], [0.0, 0.0]])
    want = (2.0 + 0.5 * np.cos(2 * np.pi * (pts[:, 0] + pts[:, 1]))
            + 0.25 * np.sin(2 * np.pi * (2 * pts[:, 0] - pts[:, 1])))
    got = u.evaluate(pts)
    assert np.allclose(got, want, atol=1e-14)


def test_random_field_is_real_and_seeded():
    rng = np.random.default_rng(11)
    u = FourierField.random(3, 4, rng, zero_mean=True)
    assert u.hermitian_defect() < 1e-14
    assert abs(u.mean()) < 1e-15
    v = FourierField.random(3, 4, np.random.default_rng(11), zero_mean=True)
    assert np.array_equal(u.coeffs, v.coeffs)


def test_grid_synthesis_round_trip():
    rng = np.random.default_rng(5)
    u = FourierField.random(2, 6, rng)
    M = default_grid_points(6)
    vals = u.grid_values(M)
    back = FourierField.from_grid(vals, 6)
    assert np.allclose(back.coeffs, u.coeffs, atol=1e-12)


def test_grid_values_match_direct_evaluation():
    rng = np.random.default_rng(9)
    u = FourierField.random(2, 3, rng)
    M = 8
    vals = u.grid_values(M)
    axis = np.arange(M) / M
    pts = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    assert np.allclose(vals.reshape(-1), u.evaluate(pts), atol=1e-12)


def test_collocation_grid_enforces_sampling_floor():
    with pytest.raises(FieldError):
        CollocationGrid(2, 4, 9)  # needs M >= 2K + 2 = 10
    g = CollocationGrid.for_bandlimit(2, 4)
    assert g.M >= 2 * 4 + 2


def test_change_bandlimit_pads_and_truncates():
    rng = np.random.default_rng(2)
    u = FourierField.random(2, 3, rng)
    up = u.change_bandlimit(6)
    down = up.change_bandlimit(3)
    assert np.allclose(down.coeffs, u.coeffs)
    assert up.l2_norm() == pytest.approx(u.l2_norm(), rel=1e-14)


def test_spectrum_round_trip():
    rng = np.random.default_rng(1)
    u = FourierField.random(2, 4, rng, components=2)
    back = FourierField.from_spectrum(u.to_spectrum())
    assert np.allclose(back.coeffs, u.coeffs)


def test_mean_is_center_coefficient():
    u = FourierField.from_terms(2, 2, [(3.5, (0, 0), "cos"), (1.0, (1, 0), "sin")])
    assert torus_mean(u) == pytest.approx(3.5, abs=1e-15)


# -- exact products ----------------------------------------------------------


def test_pointwise_product_mean_oracle():
    # mean(cos^2) = 1/2 exactly in the truncated algebra
    u = FourierField.from_terms(2, 1, [(1.0, (1, 1), "cos")])
    sq = pointwise_product(u, u)
    assert torus_mean(sq) == pytest.approx(0.5, abs=1e-15)
    assert sq.K == 2


def test_product_matches_grid_multiplication():
    rng = np.random.default_rng(4)
    u = FourierField.random(2, 3, rng)
    v = FourierField.random(2, 2, rng)
    w = pointwise_product(u, v)
    M = 2 * (3 + 2) + 1
    assert np.allclose(w.grid_values(M), u.grid_values(M) * v.grid_values(M), atol=1e-12)


def test_dot_product_of_vector_fields():
    rng = np.random.default_rng(8)
    a = FourierField.random(2, 2, rng, components=2)
    b = FourierField.random(2, 2, rng, components=2)
    s = dot_product(a, b)
    M = 11
    ga, gb = a.grid_values(M), b.grid_values(M)
    assert np.allclose(s.grid_values(M), np.einsum("c...,c...->...", ga, gb), atol=1e-12)


# -- projected calculus ------------------------------------------------------


def test_projected_gradient_single_mode():
    # grad_R of cos(2 pi k.y) is -2 pi (R^T k) sin(2 pi k.y)
    k = (1, 1)
    u = FourierField.from_terms(2, 2, [(1.0, k, "cos")])
    g = projected_gradient(u, FIB)
    w = np.array(k, dtype=float) @ FIB.matrix
    pts = np.array([[0.15, 0.35], [0.6, 0.1]])
    want = -2 * np.pi * w[None, :] * np.sin(2 * np.pi * pts.sum(axis=1))[:, None]
    assert np.allclose(g.evaluate(pts), want, atol=1e-13)


def test_divergence_of_gradient_is_projected_laplacian():
    rng = np.random.default_rng(13)
    u = FourierField.random(2, 4, rng, zero_mean=True)
    lap = projected_divergence(projected_gradient(u, FIB), FIB)
    # mode k scales by -4 pi^2 |R^T k|^2
    from qphom.fields import projected_modes

    W = projected_modes(FIB, 4)
    factor = -4 * np.pi**2 * np.sum(W**2, axis=0)
    assert np.allclose(lap.coeffs, factor * u.coeffs, atol=1e-12)


@pytest.mark.parametrize("seed,m,n,K", [(0, 2, 1, 2), (1, 2, 1, 4), (2, 3, 2, 3),
                                        (3, 4, 2, 2), (4, 3, 1, 4)])
def test_green_identity_random_pairs(seed, m, n, K):
    pm = FIB if (m, n) == (2, 1) else random_matrix(m, n, seed + 100)
    rng = np.random.default_rng(seed)
    phi = FourierField.random(m, K, rng, components=n)
    theta = FourierField.random(m, K, rng)
    assert green_identity_residual(phi, theta, pm) < 1e-12


def test_field_inner_is_l2_pairing():
    rng = np.random.default_rng(21)
    u = FourierField.random(2, 3, rng)
    v = FourierField.random(2, 3, rng)
    M = 9
    want = np.mean(u.grid_values(M) * v.grid_values(M))
    assert field_inner(u, v) == pytest.approx(want, rel=1e-12)


# -- slice restriction and ergodic averages ----------------------------------


def test_slice_sample_agrees_with_evaluate():
    rng = np.random.default_rng(6)
    u = FourierField.random(2, 3, rng)
    x = np.linspace(0.0, 1.0, 17)[:, None]
    eta = 0.1
    got = slice_sample(u, FIB, eta, x)
    y = (x @ FIB.matrix.T) / eta
    assert np.allclose(got, u.evaluate(y - np.floor(y)), atol=1e-12)


def test_slice_box_average_single_mode_closed_form():
    # box average of cos(2 pi w x / eta) over width h is sinc(w h / eta) cos(...)
    k = (1, 1)
    u = FourierField.from_terms(2, 1, [(1.0, k, "cos")])
    w = float(np.array(k, float) @ FIB.matrix[:, 0])
    eta, h = 0.05, 0.01
    x = np.array([[0.3], [0.55]])
    got = slice_sample(u, FIB, eta, x, box=np.array([h]))
    want = np.sinc(w * h / eta) * np.cos(2 * np.pi * w * x[:, 0] / eta)
    assert np.allclose(got, want, atol=1e-12)


def test_slice_box_average_matches_quadrature():
    rng = np.random.default_rng(31)
    u = FourierField.random(2, 4, rng)
    eta, h = 0.07, 0.004
    x0 = 0.42
    got = slice_sample(u, FIB, eta, np.array([[x0]]), box=np.array([h]))[0]
    xs = np.linspace(x0 - h / 2, x0 + h / 2, 20001)[:, None]
    vals = slice_sample(u, FIB, eta, xs)
    want = np.trapezoid(vals, dx=h / 20000) / h
    assert got == pytest.approx(want, abs=1e-9)


def test_ergodic_average_single_mode_sinc():
    k = (1, 1)
    u = FourierField.from_terms(2, 2, [(1.0, k, "cos")])
    w = float(np.array(k, float) @ FIB.matrix[:, 0])
    for T in (10.0, 100.0, 1e4):
        want = np.sinc(2 * w * T)
        assert ergodic_average(u, FIB, T) == pytest.approx(want, abs=1e-12)


def test_ergodic_average_tends_to_torus_mean():
    u = FourierField.from_terms(2, 2, [(1.7, (0, 0), "cos"), (1.0, (1, 1), "cos"),
                                       (0.5, (1, -1), "sin")])
    err = abs(ergodic_average(u, FIB, 1e4) - torus_mean(u))
    assert err < 1e-2
    assert err <= ergodic_mode_bound(u, FIB, 1e4) + 1e-15


def test_ergodic_mode_bound_is_a_bound():
    rng = np.random.default_rng(17)
    u = FourierField.random(2, 5, rng, zero_mean=True)
    for T in (3.0, 30.0, 300.0):
        assert abs(ergodic_average(u, FIB, T)) <= ergodic_mode_bound(u, FIB, T) + 1e-15


# -- subspace splitting ------------------------------------------------------


def test_subspace_split_irrational_slope_is_all_mixed():
    rng = np.random.default_rng(19)
    u = FourierField.random(2, 3, rng, zero_mean=True)
    split = subspace_split(u, FIB)
    assert split.exact  # catalogue tag enables the exact test
    counts = split.counts
    assert counts["physical"] == 0 and counts["orthogonal"] == 0
    assert counts["mixed"] > 0


def test_subspace_split_axis_aligned_plane():
    # physical subspace = first two coordinates of the 3-torus: mode (a,b,0)
    # is physical, (0,0,c) is orthogonal, anything else mixed
    pm = new_projection(np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]))
    u = FourierField.zeros(3, 2)
    c = u.coeffs
    K = 2
    c[(K + 1, K + 0, K + 0)] = 1.0  # (1,0,0) physical
    c[(K - 1, K + 0, K + 0)] = 1.0
    c[(K + 0, K + 0, K + 1)] = 0.5  # (0,0,1) orthogonal
    c[(K + 0, K + 0, K - 1)] = 0.5
    c[(K + 1, K + 0, K + 1)] = 0.25j  # (1,0,1) mixed
    c[(K - 1, K + 0, K - 1)] = -0.25j
    split = subspace_split(u, pm)
    counts = split.counts
    assert counts == {"physical": 2, "orthogonal": 2, "mixed": 2}
