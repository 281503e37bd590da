"""Macroscopic Dirichlet problems on boxes, driven by pointwise flux laws.

Meshes are uniform tensor grids: P1 elements in 1D, Q1 in 2D, homogeneous
Dirichlet boundary everywhere.  The flux law is a black box mapping
(x, grad u) batches to flux batches, so the same Newton loop serves the
homogenized operator (cell-cache backed), the oscillatory fine operator
(coefficient restricted to the slice), and plain constant-coefficient laws.

Newton uses an exact assembled residual, a finite-difference tangent
(central, relative step 1e-6), a dual-norm stopping rule measured through
the unit Laplacian, a backtracking line search, and a Levenberg damping
fallback for degenerate tangents (p-growth laws near zero gradient).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cell import CellCache
from .flux import FluxModel
from .projection import ProjectionMatrix
from .symbolic import Expression

GAUSS_POINTS = np.array([-math.sqrt(3.0 / 5.0), 0.0, math.sqrt(3.0 / 5.0)])
GAUSS_WEIGHTS = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


class FEMError(RuntimeError):
    pass


class UnderResolvedError(FEMError):
    """Fine solve refused: the mesh cannot resolve the oscillation period."""


@dataclass
class MacroProblem:
    n: int
    lengths: tuple
    elements: tuple
    source: Expression
    p: float = 2.0
    newton_tol: float = 1e-9
    max_newton: int = 60

    def __post_init__(self):
        if self.n not in (1, 2):
            raise FEMError("macro dimension must be 1 or 2")
        self.lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        self.elements = tuple(int(v) for v in np.atleast_1d(self.elements))
        if len(self.lengths) != self.n or len(self.elements) != self.n:
            raise FEMError("lengths and elements must list one value per axis")
        if any(v <= 0 for v in self.lengths) or any(e < 2 for e in self.elements):
            raise FEMError("need positive lengths and at least 2 elements per axis")

    def with_elements(self, elements) -> "MacroProblem":
        return MacroProblem(n=self.n, lengths=self.lengths,
                            elements=tuple(int(v) for v in np.atleast_1d(elements)),
                            source=self.source, p=self.p,
                            newton_tol=self.newton_tol, max_newton=self.max_newton)


# ---------------------------------------------------------------------------
# flux law adapters


class ConstantLaw:
    """sigma(x, xi) = B xi for a fixed n x n matrix (identity by default)."""

    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))

    label = "constant"

    def sigma(self, x, xi):
        return xi @ self.matrix.T


class RadialLaw:
    """sigma(x, xi) = s |xi|^(p-2) xi; the constant-coefficient p-growth law."""

    def __init__(self, s: float, p: float):
        self.s, self.p = float(s), float(p)

    label = "radial"

    def sigma(self, x, xi):
        if self.p == 2:
            return self.s * xi
        r = np.linalg.norm(xi, axis=1)
        with np.errstate(divide="ignore"):
            w = r ** (self.p - 2)
        if self.p > 2:
            w = np.where(r == 0, 0.0, w)
        return self.s * w[:, None] * xi


class HomogenizedLaw:
    """Effective flux from corrector solves, batch-evaluated through the cache."""

    def __init__(self, cache: CellCache):
        self.cache = cache
        self.label = "homogenized"

    def sigma(self, x, xi):
        return self.cache.hom_flux_batch(x, xi)


class FineLaw:
    """Oscillatory flux sigma(x, R x / eta, xi) at a fixed period eta.

    Coefficient and macro-factor samples are memoized per point batch, since
    Newton re-evaluates the law many times at the same quadrature points.
    """

    def __init__(self, pm: ProjectionMatrix, model: FluxModel, eta: float):
        if eta <= 0:
            raise FEMError("eta must be positive")
        self.pm, self.model, self.eta = pm, model, eta
        self.label = "fine(eta=%g)" % eta
        self._memo_key = None
        self._memo = None

    def slice_points(self, x):
        y = (np.atleast_2d(x) @ self.pm.matrix.T) / self.eta
        return y - np.floor(y)

    def _samples(self, x):
        key = (id(x), x.shape[0])
        if self._memo_key != key:
            y = self.slice_points(x)
            coeff = self.model.coefficient_at(y)
            if self.model.family == "linear-matrix":
                coeff = np.ascontiguousarray(np.moveaxis(coeff, 0, -1))  # (n, n, P)
            mu = self.model.mu_values(x)
            self._memo_key, self._memo = key, (coeff, mu)
        return self._memo

    def sigma(self, x, xi):
        coeff, mu = self._samples(np.atleast_2d(x))
        flux = self.model.sigma_on_grid(coeff, np.asarray(xi, dtype=float).T)
        return mu[:, None] * flux.T


# ---------------------------------------------------------------------------
# mesh machinery


class _Mesh:
    """Uniform tensor mesh with cached Gauss-3 quadrature and Q1/P1 bases."""

    def __init__(self, problem: MacroProblem):
        self.problem = problem
        self.n = problem.n
        self.axes = [np.linspace(0.0, L, E + 1) for L, E in zip(problem.lengths, problem.elements)]
        self.h = [L / E for L, E in zip(problem.lengths, problem.elements)]
        if self.n == 1:
            E = problem.elements[0]
            h = self.h[0]
            centers = self.axes[0][:-1] + h / 2
            self.xq = (centers[:, None] + (h / 2) * GAUSS_POINTS[None, :]).reshape(-1, 1)
            self.wq = np.tile(GAUSS_WEIGHTS * h / 2, E)
            self.n_nodes = E + 1
            self.interior = np.arange(1, E)
            # P1 gradients: dphi_left = -1/h, dphi_right = 1/h on each element
        else:
            Ex, Ey = problem.elements
            hx, hy = self.h
            gx, gw = GAUSS_POINTS, GAUSS_WEIGHTS
            cx = self.axes[0][:-1][:, None] + hx / 2 + (hx / 2) * gx[None, :]
            cy = self.axes[1][:-1][:, None] + hy / 2 + (hy / 2) * gx[None, :]
            X = cx[:, None, :, None] + 0.0 * cy[None, :, None, :]
            Y = 0.0 * cx[:, None, :, None] + cy[None, :, None, :]
            self.xq = np.stack([X.reshape(-1), Y.reshape(-1)], axis=1)
            w2 = (gw[:, None] * gw[None, :]) * (hx * hy / 4)
            self.wq = np.tile(w2.reshape(-1), Ex * Ey)
            self.n_nodes = (Ex + 1) * (Ey + 1)
            nodes = np.arange(self.n_nodes).reshape(Ex + 1, Ey + 1)
            self.interior = nodes[1:-1, 1:-1].reshape(-1)
            ex, ey = np.meshgrid(np.arange(Ex), np.arange(Ey), indexing="ij")
            self.conn = np.stack([
                nodes[ex, ey], nodes[ex + 1, ey], nodes[ex + 1, ey + 1], nodes[ex, ey + 1]
            ], axis=-1).reshape(-1, 4)
            # reference Q1 basis at the 9 tensor Gauss points
            r = (gx[:, None] + 0.0 * gx[None, :]).reshape(-1)
            s = (0.0 * gx[:, None] + gx[None, :]).reshape(-1)
            self.phi = np.stack([
                (1 - r) * (1 - s) / 4, (1 + r) * (1 - s) / 4,
                (1 + r) * (1 + s) / 4, (1 - r) * (1 + s) / 4,
            ], axis=0)                                    # (4, 9)
            dr = np.stack([-(1 - s) / 4, (1 - s) / 4, (1 + s) / 4, -(1 + s) / 4], axis=0)
            ds = np.stack([-(1 - r) / 4, -(1 + r) / 4, (1 + r) / 4, (1 - r) / 4], axis=0)
            self.dphi = np.stack([dr * (2 / hx), ds * (2 / hy)], axis=-1)   # (4, 9, 2)

    # -- field evaluation at quadrature points -------------------------------

    def gradients(self, values: np.ndarray) -> np.ndarray:
        """grad u at every quadrature point, (Q, n)."""
        if self.n == 1:
            du = np.diff(values) / self.h[0]
            return np.repeat(du, 3)[:, None]
        ue = values.reshape(-1)[self.conn]                 # (E, 4)
        return np.einsum("aqd,ea->eqd", self.dphi, ue).reshape(-1, 2)

    def values_at_quad(self, values: np.ndarray) -> np.ndarray:
        if self.n == 1:
            v = values
            left = np.repeat(v[:-1], 3)
            right = np.repeat(v[1:], 3)
            t = np.tile((GAUSS_POINTS + 1) / 2, self.problem.elements[0])
            return left * (1 - t) + right * t
        ue = values.reshape(-1)[self.conn]
        return np.einsum("aq,ea->eq", self.phi, ue).reshape(-1)

    # -- assembly -------------------------------------------------------------

    def scatter_flux(self, flux_q: np.ndarray) -> np.ndarray:
        """Nodal vector of int sigma . grad phi_i over the mesh."""
        out = np.zeros(self.n_nodes)
        if self.n == 1:
            s = (self.wq * flux_q[:, 0]).reshape(-1, 3).sum(axis=1) / self.h[0]
            np.add.at(out, np.arange(len(s)), -s)
            np.add.at(out, np.arange(1, len(s) + 1), s)
            return out
        contrib = np.einsum("aqd,eqd->ea",
                            self.dphi,
                            (self.wq.reshape(-1, 9)[:, :, None] * flux_q.reshape(-1, 9, 2)))
        np.add.at(out, self.conn.reshape(-1), contrib.reshape(-1))
        return out

    def load_vector(self, source: Expression) -> np.ndarray:
        fq = source(self.xq)
        out = np.zeros(self.n_nodes)
        if self.n == 1:
            t = np.tile((GAUSS_POINTS + 1) / 2, self.problem.elements[0])
            wf = self.wq * fq
            np.add.at(out, np.repeat(np.arange(len(self.axes[0]) - 1), 3), wf * (1 - t))
            np.add.at(out, np.repeat(np.arange(1, len(self.axes[0])), 3), wf * t)
            return out
        contrib = np.einsum("aq,eq->ea", self.phi, (self.wq * fq).reshape(-1, 9))
        np.add.at(out, self.conn.reshape(-1), contrib.reshape(-1))
        return out

    def stiffness(self, tangent_q: np.ndarray) -> sp.csr_matrix:
        """Assemble grad phi_a . D(xq) grad phi_b with D given per quad point."""
        if self.n == 1:
            E = self.problem.elements[0]
            k = (self.wq * tangent_q[:, 0, 0]).reshape(-1, 3).sum(axis=1) / self.h[0] ** 2
            main = np.zeros(self.n_nodes)
            main[:-1] += k
            main[1:] += k
            return sp.diags([-k, main, -k], offsets=[-1, 0, 1], format="csr")
        D = (self.wq.reshape(-1, 9)[:, :, None, None] * tangent_q.reshape(-1, 9, 2, 2))
        Ke = np.einsum("aqc,eqcd,bqd->eab", self.dphi, D, self.dphi)
        rows = np.repeat(self.conn, 4, axis=1).reshape(-1)
        cols = np.tile(self.conn, (1, 4)).reshape(-1)
        A = sp.coo_matrix((Ke.reshape(-1), (rows, cols)),
                          shape=(self.n_nodes, self.n_nodes))
        return A.tocsr()


# ---------------------------------------------------------------------------
# solutions


@dataclass
class MacroSolution:
    problem: MacroProblem
    label: str
    values: np.ndarray             # nodal values on the full grid (flat)
    newton_iterations: int
    residual_dual: float
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def nodes(self):
        mesh = _mesh_for(self.problem)
        return mesh.axes

    def grid(self) -> np.ndarray:
        if self.problem.n == 1:
            return self.values
        Ex, Ey = self.problem.elements
        return self.values.reshape(Ex + 1, Ey + 1)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mesh = _mesh_for(self.problem)
        if self.problem.n == 1:
            return np.interp(x[:, 0], mesh.axes[0], self.values)
        return _bilinear(mesh, self.grid(), x, derivative=False)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mesh = _mesh_for(self.problem)
        if self.problem.n == 1:
            h = mesh.h[0]
            e = np.clip(((x[:, 0] - 0.0) / h).astype(int), 0, self.problem.elements[0] - 1)
            du = np.diff(self.values) / h
            return du[e][:, None]
        return _bilinear(mesh, self.grid(), x, derivative=True)


_MESHES: dict = {}


def _mesh_for(problem: MacroProblem) -> _Mesh:
    key = (problem.n, problem.lengths, problem.elements)
    if key not in _MESHES:
        _MESHES[key] = _Mesh(problem)
    return _MESHES[key]


def _bilinear(mesh: _Mesh, grid: np.ndarray, x: np.ndarray, derivative: bool):
    hx, hy = mesh.h
    Ex, Ey = mesh.problem.elements
    ex = np.clip((x[:, 0] / hx).astype(int), 0, Ex - 1)
    ey = np.clip((x[:, 1] / hy).astype(int), 0, Ey - 1)
    tx = x[:, 0] / hx - ex
    ty = x[:, 1] / hy - ey
    v00 = grid[ex, ey]
    v10 = grid[ex + 1, ey]
    v01 = grid[ex, ey + 1]
    v11 = grid[ex + 1, ey + 1]
    if not derivative:
        return (v00 * (1 - tx) * (1 - ty) + v10 * tx * (1 - ty)
                + v01 * (1 - tx) * ty + v11 * tx * ty)
    gx = ((v10 - v00) * (1 - ty) + (v11 - v01) * ty) / hx
    gy = ((v01 - v00) * (1 - tx) + (v11 - v10) * tx) / hy
    return np.stack([gx, gy], axis=1)


# ---------------------------------------------------------------------------
# Newton driver


def _fd_tangent(law, xq, xi) -> np.ndarray:
    """Central finite-difference flux derivative, (Q, n, n)."""
    Q, n = xi.shape
    out = np.empty((Q, n, n))
    step = 1e-6 * (1.0 + np.linalg.norm(xi, axis=1))
    for j in range(n):
        dxi = np.zeros_like(xi)
        dxi[:, j] = step
        out[:, :, j] = (law.sigma(xq, xi + dxi) - law.sigma(xq, xi - dxi)) / (2 * step[:, None])
    return out


def solve_macro(
    problem: MacroProblem,
    law,
    initial: "np.ndarray | MacroSolution | None" = None,
) -> MacroSolution:
    """Damped Newton iteration for div sigma(x, grad u) + f = 0, u = 0 on the boundary.

    The residual dual norm sqrt(F^T K0^{-1} F), with K0 the unit-coefficient
    stiffness, is the stopping quantity; it is mesh-consistent so one
    tolerance serves all refinement levels.  initial may be a nodal vector
    for this problem's mesh or a MacroSolution on any mesh over the same
    domain (interpolated onto this one); warm starts keep degenerate
    p-growth tangents well away from their stall regions on fine meshes.
    """
    mesh = _mesh_for(problem)
    interior = mesh.interior
    load = mesh.load_vector(problem.source)

    K0 = mesh.stiffness(np.broadcast_to(np.eye(problem.n), (len(mesh.wq), problem.n, problem.n)))
    K0_ii = K0[interior][:, interior].tocsc()
    K0_lu = spla.splu(K0_ii)

    def dual_norm(F_int):
        return float(np.sqrt(F_int @ K0_lu.solve(F_int)))

    values = np.zeros(mesh.n_nodes)
    if isinstance(initial, MacroSolution):
        pts = np.stack([g.ravel() for g in np.meshgrid(*mesh.axes, indexing="ij")], axis=1)
        values = initial.evaluate(pts)
        mask = np.ones(mesh.n_nodes, dtype=bool)
        mask[interior] = False
        values[mask] = 0.0  # keep the Dirichlet boundary exact
    elif initial is not None:
        values = np.asarray(initial, dtype=float).copy()
        if values.shape != (mesh.n_nodes,):
            raise FEMError("initial guess has wrong size")
    else:
        # Poisson start: keeps p-growth tangents away from the degenerate origin
        values[interior] = K0_lu.solve(load[interior])

    def residual(vals):
        grad = mesh.gradients(vals)
        flux = law.sigma(mesh.xq, grad)
        F = mesh.scatter_flux(flux) - load
        return F[interior]

    F = residual(values)
    dual = dual_norm(F)
    history = [dual]
    lam = 0.0
    it = 0
    while dual > problem.newton_tol and it < problem.max_newton:
        grad = mesh.gradients(values)
        D = _fd_tangent(law, mesh.xq, grad)
        J = mesh.stiffness(D)[interior][:, interior].tocsc()
        while True:
            try:
                lu = spla.splu(J + lam * K0_ii if lam else J)
                delta = lu.solve(-F)
            except RuntimeError:
                delta = None
            if delta is not None and np.all(np.isfinite(delta)):
                break
            lam = max(10 * lam, 1e-10)
            if lam > 1e8:
                raise FEMError("tangent factorization failed beyond recovery")

        t, accepted = 1.0, False
        for _ in range(25):
            trial = values.copy()
            trial[interior] += t * delta
            F_try = residual(trial)
            d_try = dual_norm(F_try)
            if d_try <= (1 - 1e-4 * t) * dual:
                values, F, dual = trial, F_try, d_try
                accepted = True
                lam = 0.0 if lam < 1e-9 else lam / 10
                break
            t /= 2
        if not accepted:
            lam = max(10 * lam, 1e-8)
            if lam > 1e8:
                raise FEMError(
                    "Newton stagnated at dual residual %.3e (tol %.3e)" % (dual, problem.newton_tol)
                )
        it += 1
        history.append(dual)

    if dual > problem.newton_tol:
        raise FEMError(
            "Newton ran out of iterations: dual residual %.3e after %d steps" % (dual, it)
        )
    return MacroSolution(
        problem=problem, label=getattr(law, "label", "custom"), values=values,
        newton_iterations=it, residual_dual=dual, converged=True,
        diagnostics={"residual_history": history},
    )


def solve_homogenized(problem: MacroProblem, cache: CellCache) -> MacroSolution:
    return solve_macro(problem, HomogenizedLaw(cache))


def solve_fine(problem: MacroProblem, pm: ProjectionMatrix, model: FluxModel,
               eta: float, elements_per_period: float = 20.0,
               initial: "np.ndarray | MacroSolution | None" = None) -> MacroSolution:
    """Resolve the oscillatory operator at period eta on a refined mesh.

    Refuses to run under 20 elements per period; the error message carries
    the minimum admissible element counts so callers can fix their config.
    """
    elements = tuple(int(math.ceil(elements_per_period * L / eta)) for L in problem.lengths)
    minimum = tuple(int(math.ceil(20.0 * L / eta)) for L in problem.lengths)
    if elements_per_period < 20.0 or any(e < lo for e, lo in zip(elements, minimum)):
        raise UnderResolvedError(
            "mesh %s cannot resolve eta=%g; need at least %s elements (20 per period)"
            % (elements, eta, minimum)
        )
    fine_problem = problem.with_elements(elements)
    return solve_macro(fine_problem, FineLaw(pm, model, eta), initial=initial)


# ---------------------------------------------------------------------------
# norms and errors


def _quad_values(sol: MacroSolution, mesh: _Mesh, kind: str):
    if kind == "value":
        return sol.evaluate(mesh.xq)[:, None]
    if kind == "gradient":
        return sol.gradient(mesh.xq)
    raise FEMError("kind must be 'value' or 'gradient'")


def lp_norm(sol: MacroSolution, p: float, kind: str = "value") -> float:
    mesh = _mesh_for(sol.problem)
    vals = _quad_values(sol, mesh, kind)
    mag = np.linalg.norm(vals, axis=1)
    return float((mesh.wq @ mag**p) ** (1.0 / p))


def lp_error(a: MacroSolution, b: MacroSolution, p: float, kind: str = "value") -> float:
    """L^p distance integrated on the finer of the two meshes."""
    finer = a if np.prod(a.problem.elements) >= np.prod(b.problem.elements) else b
    mesh = _mesh_for(finer.problem)
    va = _quad_values(a, mesh, kind)
    vb = _quad_values(b, mesh, kind)
    mag = np.linalg.norm(va - vb, axis=1)
    return float((mesh.wq @ mag**p) ** (1.0 / p))
