"""Monotone flux laws sigma(x, y, xi) with a sampling-based assumption audit.

Supported families (all share an optional positive macro factor mu(x)):

    linear-scalar          sigma = mu(x) a(y) xi                  (p = 2)
    linear-matrix          sigma = mu(x) A(y) xi                  (p = 2)
    power-law              sigma = mu(x) a(y) |xi|^(p-2) xi
    regularized-power-law  sigma = mu(x) a(y) (eps^2 + |xi|^2)^((p-2)/2) xi

a(y) is a positive band-limited scalar, A(y) a symmetric positive definite
band-limited matrix.  The audit draws deterministic samples and checks the
structure constants: coercivity c, monotonicity c1, growth c2, measured
through p-homogeneous quotients so one set of constants covers all xi scales.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .fields import FourierField
from .symbolic import Expression, constant_expression

FAMILIES = ("linear-scalar", "linear-matrix", "power-law", "regularized-power-law")


class FluxError(ValueError):
    pass


@dataclass
class FluxModel:
    family: str
    p: float
    coefficient: FourierField        # scalar a(y), or n*n components for linear-matrix
    n: int
    mu: Expression | None = None     # positive macro factor, None means 1
    reg_eps: float = 0.0
    declared: dict = field(default_factory=dict)   # {"c":, "c1":, "c2":}
    label: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise FluxError("unknown family %r (have %s)" % (self.family, ", ".join(FAMILIES)))
        if not self.p > 1:
            raise FluxError("exponent p must exceed 1, got %g" % self.p)
        if self.family.startswith("linear") and self.p != 2:
            raise FluxError("linear families fix p = 2")
        if self.family == "regularized-power-law" and not self.reg_eps > 0:
            raise FluxError("regularized family needs reg_eps > 0")
        if self.family != "regularized-power-law" and self.reg_eps:
            raise FluxError("reg_eps only applies to the regularized family")
        want = self.n * self.n if self.family == "linear-matrix" else 0
        if self.coefficient.components != want:
            raise FluxError(
                "coefficient must have %d components for family %r" % (want, self.family)
            )
        self._validate_coefficient()

    def _validate_coefficient(self):
        a = self.coefficient
        M = max(8 * a.K + 1, 16)
        vals = a.grid_values(M)
        if self.family == "linear-matrix":
            mats = vals.reshape(self.n, self.n, -1)
            if np.abs(mats - mats.transpose(1, 0, 2)).max() > 1e-12 * max(1.0, np.abs(mats).max()):
                raise FluxError("matrix coefficient must be symmetric")
            eigs = np.linalg.eigvalsh(np.moveaxis(mats, 2, 0))
            self.coeff_min = float(eigs.min())
            self.coeff_max = float(eigs.max())
        else:
            self.coeff_min = float(vals.min())
            self.coeff_max = float(vals.max())
        if self.coeff_min <= 0:
            raise FluxError(
                "coefficient must stay positive (sampled minimum %.3g)" % self.coeff_min
            )

    @property
    def q(self) -> float:
        """Dual exponent, 1/p + 1/q = 1."""
        return self.p / (self.p - 1)

    @property
    def m(self) -> int:
        return self.coefficient.m

    def cache_id(self) -> str:
        h = hashlib.sha1()
        h.update(repr((self.family, self.p, self.reg_eps, self.n,
                       self.coefficient.K, self.coefficient.components)).encode())
        h.update(np.ascontiguousarray(self.coefficient.coeffs).tobytes())
        if self.mu is not None:
            h.update(self.mu.source.encode())
        return h.hexdigest()[:16]

    # -- pointwise evaluation -------------------------------------------------

    def mu_values(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.mu is None:
            return np.ones(x.shape[0])
        vals = self.mu(x)
        if np.any(vals <= 0):
            raise FluxError("macro factor mu(x) must stay positive")
        return vals

    def coefficient_at(self, y: np.ndarray) -> np.ndarray:
        """a(y) as (P,), or A(y) as (P, n, n) for the matrix family."""
        vals = self.coefficient.evaluate(y)
        if self.family == "linear-matrix":
            return vals.reshape(-1, self.n, self.n)
        return vals

    def sigma(self, x: np.ndarray, y: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Flux at sample points; x (P, n), y (P, m), xi (P, n) -> (P, n)."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        mu = self.mu_values(x)
        coeff = self.coefficient_at(np.atleast_2d(y))
        if self.family == "linear-matrix":
            out = np.einsum("pij,pj->pi", coeff, xi)
        else:
            out = (coeff * self._radial_weight(np.linalg.norm(xi, axis=1)))[:, None] * xi
        return mu[:, None] * out

    def _radial_weight(self, r: np.ndarray) -> np.ndarray:
        """|xi|-dependent factor so sigma = mu a w(|xi|) xi for scalar families."""
        if self.family == "linear-scalar":
            return np.ones_like(r)
        if self.family == "power-law":
            if self.p < 2 and np.any(r == 0):
                raise FluxError("power-law with p < 2 is singular at xi = 0; use the regularized family")
            with np.errstate(divide="ignore"):
                w = r ** (self.p - 2)
            if self.p > 2:
                w = np.where(r == 0, 0.0, w)
            return w
        return (self.reg_eps**2 + r**2) ** ((self.p - 2) / 2)

    def potential(self, x: np.ndarray, y: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Convex potential W with dW/dxi = sigma and W(0) = 0."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        mu = self.mu_values(x)
        coeff = self.coefficient_at(np.atleast_2d(y))
        r = np.linalg.norm(xi, axis=1)
        if self.family == "linear-matrix":
            return 0.5 * mu * np.einsum("pi,pij,pj->p", xi, coeff, xi)
        if self.family == "linear-scalar":
            return 0.5 * mu * coeff * r**2
        if self.family == "power-law":
            return mu * coeff * r**self.p / self.p
        core = (self.reg_eps**2 + r**2) ** (self.p / 2) - self.reg_eps**self.p
        return mu * coeff * core / self.p

    # -- grid evaluation (cell solver hot path) -------------------------------

    def sigma_on_grid(self, coeff_vals: np.ndarray, xi_vals: np.ndarray) -> np.ndarray:
        """Flux from precomputed coefficient samples; mu is excluded here.

        coeff_vals: a(y) samples broadcastable to the grid, or (n, n) + grid.
        xi_vals: (n,) + grid gradient samples.
        """
        if self.family == "linear-matrix":
            return np.einsum("ij...,j...->i...", coeff_vals, xi_vals)
        r2 = (xi_vals**2).sum(axis=0)
        if self.family == "linear-scalar":
            w = coeff_vals
        elif self.family == "power-law":
            if self.p < 2 and np.any(r2 == 0):
                raise FluxError("power-law with p < 2 is singular at xi = 0; use the regularized family")
            with np.errstate(divide="ignore"):
                w = coeff_vals * r2 ** ((self.p - 2) / 2)
            if self.p > 2:
                w = np.where(r2 == 0, 0.0, w)
        else:
            w = coeff_vals * (self.reg_eps**2 + r2) ** ((self.p - 2) / 2)
        return w[None] * xi_vals

    def secant_on_grid(self, coeff_vals: np.ndarray, xi_vals: np.ndarray, floor: float) -> np.ndarray:
        """Scalar weight b with sigma = b xi at the current gradient, floored
        away from zero so the frozen-coefficient operator stays invertible."""
        if self.family == "linear-matrix":
            raise FluxError("secant weight is scalar-family only")
        r2 = (xi_vals**2).sum(axis=0)
        if self.family == "linear-scalar":
            return np.broadcast_to(coeff_vals, r2.shape).astype(float)
        eps2 = self.reg_eps**2
        return coeff_vals * np.maximum(eps2 + r2, floor**2) ** ((self.p - 2) / 2)

    def potential_on_grid(self, coeff_vals: np.ndarray, xi_vals: np.ndarray) -> np.ndarray:
        if self.family == "linear-matrix":
            return 0.5 * np.einsum("i...,ij...,j...->...", xi_vals, coeff_vals, xi_vals)
        r2 = (xi_vals**2).sum(axis=0)
        if self.family == "linear-scalar":
            return 0.5 * coeff_vals * r2
        if self.family == "power-law":
            return coeff_vals * r2 ** (self.p / 2) / self.p
        core = (self.reg_eps**2 + r2) ** (self.p / 2) - self.reg_eps**self.p
        return coeff_vals * core / self.p


# ---------------------------------------------------------------------------
# assumption audit


@dataclass(frozen=True)
class AuditReport:
    sample_count: int
    rng_seed: int
    declared: dict
    min_coercivity: float
    min_monotonicity: float
    max_growth: float
    zero_flux_max: float
    mu_min: float
    coercivity_ok: bool
    monotonicity_ok: bool
    growth_ok: bool
    zero_flux_ok: bool
    mu_positive_ok: bool
    witness_coercivity: dict | None
    witness_monotonicity: dict | None
    witness_growth: dict | None

    @property
    def passed(self) -> bool:
        return (self.coercivity_ok and self.monotonicity_ok and self.growth_ok
                and self.zero_flux_ok and self.mu_positive_ok)

    def failures(self) -> list:
        out = []
        if not self.coercivity_ok:
            out.append(("coercivity", self.min_coercivity, self.witness_coercivity))
        if not self.monotonicity_ok:
            out.append(("monotonicity", self.min_monotonicity, self.witness_monotonicity))
        if not self.growth_ok:
            out.append(("growth", self.max_growth, self.witness_growth))
        if not self.zero_flux_ok:
            out.append(("zero-flux", self.zero_flux_max, None))
        if not self.mu_positive_ok:
            out.append(("mu-positivity", self.mu_min, None))
        return out

    def to_json(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "rng_seed": self.rng_seed,
            "declared": dict(self.declared),
            "passed": self.passed,
            "measured": {
                "min_coercivity": self.min_coercivity,
                "min_monotonicity": self.min_monotonicity,
                "max_growth": self.max_growth,
                "zero_flux_max": self.zero_flux_max,
                "mu_min": self.mu_min,
            },
            "checks": {
                "coercivity": self.coercivity_ok,
                "monotonicity": self.monotonicity_ok,
                "growth": self.growth_ok,
                "zero_flux": self.zero_flux_ok,
                "mu_positive": self.mu_positive_ok,
            },
            "witnesses": {
                "coercivity": self.witness_coercivity,
                "monotonicity": self.witness_monotonicity,
                "growth": self.witness_growth,
            },
        }


def _witness(x, y, xi, value, xi2=None) -> dict:
    out = {
        "x": [float(v) for v in np.atleast_1d(x)],
        "y": [float(v) for v in np.atleast_1d(y)],
        "xi": [float(v) for v in np.atleast_1d(xi)],
        "quotient": float(value),
    }
    if xi2 is not None:
        out["xi2"] = [float(v) for v in np.atleast_1d(xi2)]
    return out


def audit_assumptions(model: FluxModel, sample_count: int = 4096,
                      rng_seed: int = 0, declared: dict | None = None) -> AuditReport:
    """Check the declared structure constants against random samples.

    Quotients are normalized by the natural |xi| power so each sample tests
    the constant directly: coercivity sigma(xi).xi / |xi|^p >= c, monotonicity
    (sigma(xi1) - sigma(xi2)).(xi1 - xi2) / |xi1 - xi2|^p >= c1, and growth
    |sigma(xi)| / (1 + |xi|^(p-1)) <= c2.  Magnitudes are drawn log-uniformly
    from [1e-3, 1e3]; everything is deterministic under rng_seed.
    """
    decl = dict(model.declared)
    if declared is not None:
        decl.update(declared)
    rng = np.random.default_rng(rng_seed)
    P = int(sample_count)
    n, m = model.n, model.m

    x = rng.uniform(0.0, 1.0, size=(P, n))
    y = rng.uniform(0.0, 1.0, size=(P, m))

    def draw_xi():
        mag = 10.0 ** rng.uniform(-3.0, 3.0, size=P)
        direction = rng.standard_normal((P, n))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        return mag[:, None] * direction

    xi1 = draw_xi()
    xi2 = draw_xi()
    p = model.p

    s1 = model.sigma(x, y, xi1)
    s2 = model.sigma(x, y, xi2)

    r1 = np.linalg.norm(xi1, axis=1)
    coer = (s1 * xi1).sum(axis=1) / r1**p
    i_c = int(np.argmin(coer))

    diff = xi1 - xi2
    rd = np.linalg.norm(diff, axis=1)
    ok = rd > 1e-12
    mono = ((s1 - s2) * diff).sum(axis=1)[ok] / rd[ok] ** p
    mono_idx = np.flatnonzero(ok)
    i_m = int(mono_idx[np.argmin(mono)])
    min_mono = float(mono.min())

    grow = np.linalg.norm(s1, axis=1) / (1.0 + r1 ** (p - 1))
    i_g = int(np.argmax(grow))

    if model.family == "power-law" and model.p < 2:
        zero_flux_max = 0.0  # defined as the limit; evaluation at 0 is refused
    else:
        zero_flux_max = float(np.linalg.norm(model.sigma(x, y, np.zeros((P, n))), axis=1).max())
    mu_min = float(model.mu_values(x).min())

    tol = 1e-9
    c = decl.get("c")
    c1 = decl.get("c1")
    c2 = decl.get("c2")
    report = AuditReport(
        sample_count=P,
        rng_seed=rng_seed,
        declared=decl,
        min_coercivity=float(coer.min()),
        min_monotonicity=min_mono,
        max_growth=float(grow.max()),
        zero_flux_max=zero_flux_max,
        mu_min=mu_min,
        coercivity_ok=(c is None) or bool(coer.min() >= c - tol),
        monotonicity_ok=(c1 is None) or bool(min_mono >= c1 - tol),
        growth_ok=(c2 is None) or bool(grow.max() <= c2 + tol),
        zero_flux_ok=bool(zero_flux_max <= 1e-12),
        mu_positive_ok=bool(mu_min > 0),
        witness_coercivity=_witness(x[i_c], y[i_c], xi1[i_c], coer[i_c]),
        witness_monotonicity=_witness(x[i_m], y[i_m], xi1[i_m], min_mono, xi2=xi2[i_m]),
        witness_growth=_witness(x[i_g], y[i_g], xi1[i_g], grow[i_g]),
    )
    return report


# ---------------------------------------------------------------------------
# convenience constructors


def scalar_coefficient(m: int, K: int, terms) -> FourierField:
    return FourierField.from_terms(m, K, terms)


def make_model(family: str, p: float, coefficient: FourierField, n: int,
               mu_source: str | None = None, reg_eps: float = 0.0,
               declared: dict | None = None, label: str = "") -> FluxModel:
    mu = None
    if mu_source is not None:
        from .symbolic import compile_macro_expression
        mu = compile_macro_expression(mu_source, n)
    if family == "power-law" and p < 2 and reg_eps == 0.0:
        # default regularization for sub-quadratic growth
        family, reg_eps = "regularized-power-law", 1e-3
    return FluxModel(family=family, p=p, coefficient=coefficient, n=n, mu=mu,
                     reg_eps=reg_eps, declared=dict(declared or {}), label=label)


def monotonicity_floor(p: float) -> float:
    """Sharp p-homogeneous monotonicity constant for the radial power law
    with unit coefficient: inf over xi pairs equals 2^(2-p) for p >= 2."""
    if p < 2:
        raise FluxError("floor formula covers p >= 2 only")
    return 2.0 ** (2.0 - p)
