"""Cut-and-projection matrices: orthonormality, certificates, witnesses."""

import math
from fractions import Fraction

import numpy as np
import pytest

from qphom.projection import (
    ProjectionError,
    QuadraticNumber,
    builtin_matrices,
    check_criterion,
    make_tag,
    matrix_from_config,
    matrix_to_config,
    new_projection,
    physical_projector,
)

PHI = (1.0 + math.sqrt(5.0)) / 2.0


# -- exact scalar arithmetic -------------------------------------------------


def test_quadratic_number_field_ops():
    a = QuadraticNumber(Fraction(1, 2), Fraction(3), 5)
    b = QuadraticNumber(Fraction(-2), Fraction(1, 3), 5)
    assert float(a + b) == pytest.approx(float(a) + float(b), rel=1e-15)
    assert float(a * b) == pytest.approx(float(a) * float(b), rel=1e-15)
    assert float(a - b) == pytest.approx(float(a) - float(b), rel=1e-15)
    inv = a.inverse()
    assert (a * inv).a == 1 and (a * inv).b == 0


def test_quadratic_number_inverse_of_zero():
    z = QuadraticNumber(Fraction(0), Fraction(0), 2)
    assert z.is_zero()
    with pytest.raises(ZeroDivisionError):
        z.inverse()


def test_quadratic_number_rejects_mixed_radicands():
    a = QuadraticNumber(Fraction(1), Fraction(1), 5)
    b = QuadraticNumber(Fraction(1), Fraction(1), 2)
    with pytest.raises(ValueError):
        _ = a + b


# -- construction ------------------------------------------------------------


def test_catalogue_is_orthonormal_and_tagged():
    cat = builtin_matrices()
    assert set(cat) == {"fibonacci", "silver-mean", "octagonal"}
    for name, pm in cat.items():
        R = pm.matrix
        gram = R.T @ R
        assert np.allclose(gram, np.eye(pm.n), atol=1e-14), name
        assert pm.tag is not None, name
        # tag columns reproduce the numeric matrix up to column scaling
        cols = pm.tag.column_floats()
        for j in range(pm.n):
            v, w = cols[:, j], R[:, j]
            cos = abs(v @ w) / (np.linalg.norm(v) * np.linalg.norm(w))
            assert cos > 1 - 1e-12


def test_fibonacci_slope_is_golden_ratio():
    pm = builtin_matrices()["fibonacci"]
    r = pm.matrix[:, 0]
    assert r[1] / r[0] == pytest.approx(PHI, rel=1e-15)


def test_new_projection_orthonormalizes():
    rng = np.random.default_rng(7)
    raw = rng.standard_normal((4, 2))
    pm = new_projection(raw)
    assert np.allclose(pm.matrix.T @ pm.matrix, np.eye(2), atol=1e-13)
    # column span is preserved
    proj = physical_projector(pm)
    assert np.allclose(proj @ raw, raw, atol=1e-12)


def test_new_projection_rejects_bad_shapes():
    with pytest.raises(ProjectionError):
        new_projection(np.ones((2, 2)))  # m must exceed n
    with pytest.raises(ProjectionError):
        new_projection(np.ones((3, 2)))  # rank deficient
    with pytest.raises(ProjectionError):
        new_projection(np.array([[1.0], [np.nan]]))


def test_physical_projector_is_projection():
    for pm in builtin_matrices().values():
        P = physical_projector(pm)
        assert np.allclose(P @ P, P, atol=1e-13)
        assert np.allclose(P, P.T, atol=1e-14)
        assert np.trace(P) == pytest.approx(pm.n, abs=1e-12)


def test_tag_survives_triangular_mix_but_not_rotation():
    # Gram-Schmidt undoes a triangular mix (same column directions), but a
    # rotation changes directions and must drop the per-column description
    pm = builtin_matrices()["octagonal"]
    tri = pm.matrix @ np.array([[1.0, 1.0], [0.0, 1.0]])
    assert new_projection(tri, tag=pm.tag).tag is not None
    c, s = math.cos(0.7), math.sin(0.7)
    rot = pm.matrix @ np.array([[c, -s], [s, c]])
    assert new_projection(rot, tag=pm.tag).tag is None


# -- criterion certificates --------------------------------------------------


def test_fibonacci_exact_pass():
    rep = check_criterion(builtin_matrices()["fibonacci"], ball_radius=200)
    assert rep.certificate == "exact-pass"
    assert rep.passed()
    assert rep.min_projected_norm > 0


def test_rational_slope_exact_fail_with_witness():
    tag = make_tag(0, [[(1, 0), (2, 0)]], label="rational 1:2")
    pm = new_projection(np.array([[1.0], [2.0]]) / math.sqrt(5.0), tag=tag)
    rep = check_criterion(pm, ball_radius=50)
    assert rep.certificate == "exact-fail"
    assert not rep.passed()
    assert rep.witness == (2, -1)
    # the witness annihilates the projection numerically as well
    w = np.array(rep.witness, dtype=float)
    assert abs(w @ pm.matrix[:, 0]) < 1e-12


def test_witness_normalization_coprime_first_positive():
    # (2,4)/sqrt(20) has kernel direction (2,-1) after scaling: gcd removed
    tag = make_tag(0, [[(2, 0), (4, 0)]], label="rational 2:4")
    pm = new_projection(np.array([[2.0], [4.0]]) / math.sqrt(20.0), tag=tag)
    rep = check_criterion(pm, ball_radius=20)
    assert rep.certificate == "exact-fail"
    assert rep.witness == (2, -1)
    assert math.gcd(*map(abs, rep.witness)) == 1
    assert rep.witness[0] > 0


def test_untagged_matrix_gets_numeric_only_certificate():
    rng = np.random.default_rng(3)
    pm = new_projection(rng.standard_normal((3, 1)))
    rep = check_criterion(pm, ball_radius=30)
    assert rep.certificate == "numeric-only"
    assert rep.min_projected_norm > 0


def test_shell_minima_are_reported_and_positive_for_fibonacci():
    rep = check_criterion(builtin_matrices()["fibonacci"], ball_radius=60)
    assert len(rep.shell_minima) > 0
    radii = [r for r, _ in rep.shell_minima]
    assert radii == sorted(radii)
    assert all(v > 0 for _, v in rep.shell_minima)


def test_criterion_scan_budget_caps_radius():
    pm = builtin_matrices()["octagonal"]  # m = 4
    rep = check_criterion(pm, ball_radius=500)
    assert rep.requested_radius == 500
    assert rep.ball_radius < 500  # budget-capped scan
    assert rep.certificate == "exact-pass"  # certificate is radius-independent


def test_small_divisors_shrink_along_fibonacci_pairs():
    # |R^T k| at k = (-F_{i+1}, F_i) decays like phi^-i: golden ratio
    # continued-fraction convergents give the worst shells
    pm = builtin_matrices()["fibonacci"]
    fib = [1, 1, 2, 3, 5, 8, 13, 21]
    vals = []
    for a, b in zip(fib, fib[1:]):
        k = np.array([-b, a], dtype=float)
        vals.append(abs(k @ pm.matrix[:, 0]))
    assert all(v2 < v1 for v1, v2 in zip(vals, vals[1:]))
    assert vals[-1] < 0.03


# -- config round trip -------------------------------------------------------


def test_matrix_config_round_trip_catalogue():
    pm = builtin_matrices()["silver-mean"]
    data = matrix_to_config(pm)
    back = matrix_from_config(data)
    assert np.allclose(back.matrix, pm.matrix)
    assert back.tag is not None and back.tag.radicand == pm.tag.radicand


def test_matrix_config_round_trip_custom_tag():
    tag = make_tag(5, [[(1, 0), (Fraction(1, 2), Fraction(1, 2))]], label="custom golden")
    pm = new_projection(np.array([[1.0], [PHI]]), tag=tag, name="custom")
    data = matrix_to_config(pm)
    back = matrix_from_config(data)
    assert np.allclose(back.matrix, pm.matrix, atol=1e-15)
    rep = check_criterion(back, ball_radius=30)
    assert rep.certificate == "exact-pass"
