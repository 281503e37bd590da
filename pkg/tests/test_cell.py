"""Cell problem solver: oracles, invariants, cache normalizations."""

import numpy as np
import pytest

from qphom.cell import (
    CellCache,
    CellProblem,
    CellSolverError,
    corrector_trace,
    solve_cell,
)
from qphom.fields import FourierField, projected_divergence, torus_mean
from qphom.flux import make_model, scalar_coefficient
from qphom.projection import builtin_matrices, make_tag, new_projection

FIB = builtin_matrices()["fibonacci"]
STANDARD_TERMS = [(2.0, (0, 0), "cos"), (0.5, (1, 1), "cos"), (0.5, (1, -1), "cos")]


def linear_model():
    return make_model("linear-scalar", 2.0, scalar_coefficient(2, 2, STANDARD_TERMS), 1)


def power_model(p=3.0):
    return make_model("power-law", p, scalar_coefficient(2, 2, STANDARD_TERMS), 1)


def torus_harmonic_mean(model, M=512):
    grid = model.coefficient.grid_values(M)
    return 1.0 / np.mean(1.0 / grid)


def sqrt_mean_oracle(model, M=512):
    # 1D p=3 effective ray coefficient: ([a^(-1/2)])^(-2)
    grid = model.coefficient.grid_values(M)
    return float(np.mean(grid ** -0.5) ** -2.0)


# -- linear oracle -----------------------------------------------------------


def test_linear_harmonic_mean_oracle():
    model = linear_model()
    problem = CellProblem(FIB, model, xi=np.array([1.0]), bandlimit=16)
    sol = solve_cell(problem)
    assert sol.converged
    want = torus_harmonic_mean(model)
    assert sol.hom_flux[0] == pytest.approx(want, rel=1e-6)


def test_linear_flux_scales_with_xi():
    model = linear_model()
    cache = CellCache(FIB, model, bandlimit=8)
    s1 = cache.solve(None, np.array([0.7]))
    s2 = cache.solve(None, np.array([-1.4]))
    assert s2.hom_flux[0] == pytest.approx(-2.0 * s1.hom_flux[0], rel=1e-9)


def test_voigt_reuss_bracketing_strict():
    model = linear_model()
    sol = solve_cell(CellProblem(FIB, model, xi=np.array([1.0]), bandlimit=16))
    M = 512
    grid = model.coefficient.grid_values(M)
    reuss = 1.0 / np.mean(1.0 / grid)
    voigt = np.mean(grid)
    val = sol.hom_flux[0]
    # 1D conduction saturates the lower bound; demand strict upper separation
    assert reuss - 1e-9 <= val < voigt - 1e-3


# -- power-law oracle --------------------------------------------------------


def test_power_law_p3_closed_form():
    model = power_model(3.0)
    sol = solve_cell(CellProblem(FIB, model, xi=np.array([1.0]), bandlimit=16))
    assert sol.converged
    assert sol.hom_flux[0] == pytest.approx(sqrt_mean_oracle(model), rel=1e-4)


def test_power_law_homogeneity_and_oddness():
    model = power_model(3.0)
    cache = CellCache(FIB, model, bandlimit=8)
    s1 = cache.solve(None, np.array([1.0])).hom_flux[0]
    s2 = cache.solve(None, np.array([2.0])).hom_flux[0]
    s3 = cache.solve(None, np.array([-1.0])).hom_flux[0]
    assert s2 == pytest.approx(4.0 * s1, rel=1e-8)
    # opposite rays are solved independently; agreement is tolerance-limited
    assert s3 == pytest.approx(-s1, rel=1e-8)


# -- solver invariants -------------------------------------------------------


def test_gradient_mean_is_xi_exactly():
    for model in (linear_model(), power_model(3.0)):
        sol = solve_cell(CellProblem(FIB, model, xi=np.array([0.8]), bandlimit=6))
        center = torus_mean(sol.gradient)
        assert float(np.asarray(center).reshape(-1)[0]) == 0.8  # pinned, not approximated


def test_flux_is_discretely_divergence_free():
    for model in (linear_model(), power_model(3.0)):
        problem = CellProblem(FIB, model, xi=np.array([1.0]), bandlimit=8)
        sol = solve_cell(problem)
        assert sol.converged
        div = projected_divergence(sol.flux, FIB)
        coeffs = div.coeffs.copy()
        coeffs[(8, 8)] = 0.0  # zero mode carries no constraint
        assert np.abs(coeffs).max() / (2 * np.pi) <= problem.residual_tol
        assert sol.max_mode_divergence <= problem.residual_tol


def test_corrector_is_zero_mean_and_real():
    sol = solve_cell(CellProblem(FIB, linear_model(), xi=np.array([1.0]), bandlimit=8))
    assert abs(torus_mean(sol.corrector)) < 1e-14
    assert sol.corrector.hermitian_defect() < 1e-12


def test_zero_xi_short_circuit():
    sol = solve_cell(CellProblem(FIB, power_model(3.0), xi=np.zeros(1), bandlimit=8))
    assert sol.converged and sol.iterations == 0
    assert np.abs(sol.corrector.coeffs).max() == 0.0
    assert np.allclose(sol.hom_flux, 0.0)


def test_energy_gradient_consistency():
    # the coefficient-space gradient drives the iteration; check it against
    # finite differences of the discrete energy
    from qphom.cell import _Workspace

    model = power_model(3.0)
    problem = CellProblem(FIB, model, xi=np.array([1.0]), bandlimit=3)
    ws = _Workspace(problem.pm, problem.model, problem.bandlimit, problem.grid_points)
    rng = np.random.default_rng(0)
    c = FourierField.random(2, 3, rng, zero_mean=True)
    c.coeffs *= 0.05
    mu = 1.0
    sig_hat, _, _ = ws.sigma_hat(c.coeffs, problem.xi)
    g, _, _ = ws.residual(sig_hat)
    d = FourierField.random(2, 3, np.random.default_rng(1), zero_mean=True)
    d.coeffs *= 0.01
    h = 1e-6
    ep = ws.energy(c.coeffs + h * d.coeffs, problem.xi)
    em = ws.energy(c.coeffs - h * d.coeffs, problem.xi)
    fd = (ep - em) / (2 * h)
    directional = 0.5 * float(np.real(np.vdot(g, d.coeffs))) * mu
    assert directional == pytest.approx(fd, rel=1e-5)


def test_diagnostics_remeasured_after_hermitization():
    sol = solve_cell(CellProblem(FIB, linear_model(), xi=np.array([1.0]), bandlimit=8))
    # reported residual must hold for the funds actually returned
    ws_tol = sol.problem.residual_tol
    assert sol.residual_norm <= ws_tol
    assert sol.max_mode_divergence <= ws_tol


def test_failing_criterion_matrix_raises():
    tag = make_tag(0, [[(1, 0), (2, 0)]])
    pm = new_projection(np.array([[1.0], [2.0]]) / np.sqrt(5.0), tag=tag)
    with pytest.raises(CellSolverError):
        solve_cell(CellProblem(pm, linear_model(), xi=np.array([1.0]), bandlimit=8))


def test_bandlimit_self_convergence_linear():
    model = linear_model()
    v16 = solve_cell(CellProblem(FIB, model, xi=np.array([1.0]), bandlimit=16)).hom_flux[0]
    v32 = solve_cell(CellProblem(FIB, model, xi=np.array([1.0]), bandlimit=32)).hom_flux[0]
    assert abs(v16 - v32) / abs(v32) <= 1e-4


# -- cache normalizations ----------------------------------------------------


def test_cache_linear_assembly_matches_direct_solve():
    model = linear_model()
    cache = CellCache(FIB, model, bandlimit=8)
    xi = np.array([0.6])
    assembled = cache.solve(None, xi)
    direct = solve_cell(CellProblem(FIB, model, xi=xi, bandlimit=8))
    assert assembled.converged
    assert assembled.hom_flux[0] == pytest.approx(direct.hom_flux[0], rel=1e-9)
    n_after = cache.solves
    cache.solve(None, np.array([-2.2]))
    assert cache.solves == n_after  # no new torus solves for a linear family


def test_cache_power_law_single_ray():
    model = power_model(3.0)
    cache = CellCache(FIB, model, bandlimit=8)
    for xi in (0.5, 1.0, 2.5):
        sol = cache.solve(None, np.array([xi]))
        assert sol.converged
    assert cache.solves == 1  # one ray covers every positive magnitude
    neg = cache.solve(None, np.array([-3.0]))
    assert neg.converged
    assert cache.solves >= 2  # the opposite direction is its own ray


def test_cache_regularized_family_uses_warm_starts():
    model = make_model("regularized-power-law", 3.0,
                       scalar_coefficient(2, 2, STANDARD_TERMS), 1, reg_eps=0.5)
    cache = CellCache(FIB, model, bandlimit=6)
    a = cache.solve(None, np.array([1.0]))
    n0 = cache.solves
    b = cache.solve(None, np.array([1.0]))  # store hit: no new torus solve
    c = cache.solve(None, np.array([1.0 + 4e-13]))  # inside quantization step
    assert cache.solves == n0
    assert b.hom_flux[0] == a.hom_flux[0]
    # same stored corrector, flux re-evaluated at the perturbed xi
    assert c.hom_flux[0] == pytest.approx(a.hom_flux[0], rel=1e-11)
    d = cache.solve(None, np.array([1.1]))
    assert d.converged and cache.solves > n0
    assert d.hom_flux[0] != a.hom_flux[0]


def test_cache_mu_rescales_but_does_not_resolve():
    model = make_model("power-law", 3.0, scalar_coefficient(2, 2, STANDARD_TERMS), 1,
                       mu_source="1 + x")
    cache = CellCache(FIB, model, bandlimit=8)
    s0 = cache.solve(np.array([0.0]), np.array([1.0]))
    s1 = cache.solve(np.array([1.0]), np.array([1.0]))
    assert cache.solves == 1  # same torus solve reused across macro points
    assert s1.hom_flux[0] == pytest.approx(2.0 * s0.hom_flux[0], rel=1e-12)


def test_effective_matrix_spd_2d():
    # 2D linear model on the octagonal matrix: B must be SPD within bounds
    pm = builtin_matrices()["octagonal"]
    terms = [(2.0, (0, 0, 0, 0), "cos"), (0.5, (1, 0, 1, 0), "cos"),
             (0.5, (0, 1, 0, -1), "cos")]
    model = make_model("linear-scalar", 2.0, scalar_coefficient(4, 1, terms), 2)
    cache = CellCache(pm, model, bandlimit=4)
    B = cache.effective_matrix()
    assert np.allclose(B, B.T, atol=1e-8)
    evals = np.linalg.eigvalsh(0.5 * (B + B.T))
    M = 64
    grid = model.coefficient.grid_values(M)
    reuss = 1.0 / np.mean(1.0 / grid)
    voigt = np.mean(grid)
    assert np.all(evals >= reuss - 1e-6)
    assert np.all(evals <= voigt + 1e-6)


def test_hom_flux_batch_matches_pointwise():
    model = power_model(3.0)
    cache = CellCache(FIB, model, bandlimit=8)
    xi = np.array([[0.5], [-1.25], [2.0]])
    x = np.zeros((3, 1))
    batch = cache.hom_flux_batch(x, xi)
    for i in range(3):
        single = cache.solve(x[i], xi[i]).hom_flux
        assert batch[i, 0] == pytest.approx(single[0], rel=1e-10)


def test_corrector_trace_drops_mean_gradient():
    model = linear_model()
    cache = CellCache(FIB, model, bandlimit=8)
    sol = cache.solve(None, np.array([1.0]))
    x = np.linspace(0.0, 1.0, 9)[:, None]
    tr = corrector_trace(sol, 0.1, x)
    # trace is the zero-mean oscillating part: its ergodic average vanishes,
    # so a long box average must be small
    xs = np.linspace(0.0, 200.0, 400001)[:, None]
    avg = corrector_trace(sol, 1.0, xs).mean()
    assert tr.shape == (9, 1)
    assert abs(avg) < 5e-3


def test_corrector_gradient_batch_box_average():
    model = linear_model()
    cache = CellCache(FIB, model, bandlimit=8)
    eta, h = 0.05, 0.002
    x = np.array([[0.37]])
    xi = np.array([[1.0]])
    got = cache.corrector_gradient_batch(x, xi, eta, box=np.array([h]))[0, 0]
    xs = np.linspace(0.37 - h / 2, 0.37 + h / 2, 4001)[:, None]
    vals = cache.corrector_gradient_batch(xs, np.ones((4001, 1)), eta)
    want = np.trapezoid(vals[:, 0], dx=h / 4000) / h
    assert got == pytest.approx(want, abs=1e-8)
