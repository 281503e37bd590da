"""Band-limited calculus on the m-torus.

Fields are truncated Fourier series u(y) = sum_{|k|_inf <= K} c_k e^{2 pi i k.y}
stored as dense complex tables of shape (2K+1)^m (scalar) or (d, (2K+1)^m)
(vector valued).  Real fields keep the Hermitian symmetry c_{-k} = conj(c_k);
constructors enforce it and `hermitian_defect` measures drift.

The projection matrix R only ever enters through the per-mode frequency
vectors R^T k, so gradients, divergences, slice restrictions and ergodic
line/plane averages are all exact mode-wise operations here.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .projection import ProjectionMatrix, QuadraticNumber


class FieldError(ValueError):
    pass


_MODE_CUBES: dict = {}


def mode_cube(m: int, K: int) -> np.ndarray:
    """Integer array of shape (m,) + (2K+1,)*m; entry [i, idx] is k_i."""
    key = (m, K)
    if key not in _MODE_CUBES:
        axes = [np.arange(-K, K + 1)] * m
        cube = np.stack(np.meshgrid(*axes, indexing="ij"), axis=0)
        cube.setflags(write=False)
        _MODE_CUBES[key] = cube
    return _MODE_CUBES[key]


def projected_modes(pm: ProjectionMatrix, K: int) -> np.ndarray:
    """Frequencies R^T k for the whole mode table, shape (n,) + (2K+1,)*m."""
    cube = mode_cube(pm.m, K)
    return np.tensordot(pm.matrix.T, cube, axes=(1, 0))


class FourierField:
    """Truncated Fourier series on the m-torus.

    coeffs axis order: optional leading component axis, then m mode axes each
    running k = -K..K.  components == 0 marks a scalar field.
    """

    __slots__ = ("m", "K", "components", "coeffs")

    def __init__(self, m: int, K: int, coeffs: np.ndarray, components: int = 0):
        coeffs = np.asarray(coeffs, dtype=complex)
        want = (2 * K + 1,) * m
        if components == 0:
            if coeffs.shape != want:
                raise FieldError("scalar coefficient table must have shape %s" % (want,))
        else:
            if coeffs.shape != (components,) + want:
                raise FieldError("vector coefficient table must have shape %s" % ((components,) + want,))
        self.m = m
        self.K = K
        self.components = components
        self.coeffs = coeffs

    # -- constructors -------------------------------------------------------

    @classmethod
    def zeros(cls, m: int, K: int, components: int = 0) -> "FourierField":
        shape = ((components,) if components else ()) + (2 * K + 1,) * m
        return cls(m, K, np.zeros(shape, dtype=complex), components)

    @classmethod
    def from_terms(cls, m: int, K: int, terms) -> "FourierField":
        """Real trigonometric polynomial from (amplitude, k, phase) triples.

        phase is "cos" or "sin"; a term with k = 0 and phase "cos" is a
        constant offset.  Raises if any |k|_inf exceeds K.
        """
        out = cls.zeros(m, K)
        for amplitude, k, phase in terms:
            k = tuple(int(v) for v in k)
            if len(k) != m:
                raise FieldError("mode %s does not have %d components" % (k, m))
            if max(abs(v) for v in k) > K:
                raise FieldError("mode %s exceeds bandlimit %d" % (k, K))
            pos = tuple(v + K for v in k)
            neg = tuple(-v + K for v in k)
            if phase == "cos":
                out.coeffs[pos] += amplitude / 2
                out.coeffs[neg] += amplitude / 2
            elif phase == "sin":
                out.coeffs[pos] += amplitude / 2j
                out.coeffs[neg] -= amplitude / 2j
            else:
                raise FieldError("phase must be 'cos' or 'sin', got %r" % (phase,))
        return out

    @classmethod
    def from_grid(cls, values: np.ndarray, K: int, components: int = 0) -> "FourierField":
        """Analyze real grid samples (trailing m axes of size M each)."""
        values = np.asarray(values, dtype=float)
        m = values.ndim - (1 if components else 0)
        M = values.shape[-1]
        if any(s != M for s in values.shape[-m:]):
            raise FieldError("grid must be square along mode axes")
        if M < 2 * K + 1:
            raise FieldError("grid of %d points cannot resolve bandlimit %d" % (M, K))
        axes = tuple(range(values.ndim - m, values.ndim))
        hat = np.fft.fftn(values, axes=axes) / M**m
        sel = np.ix_(*([np.arange(-K, K + 1) % M] * m))
        if components:
            table = np.stack([hat[c][sel] for c in range(components)])
        else:
            table = hat[sel]
        return cls(m, K, table, components)

    @classmethod
    def random(cls, m: int, K: int, rng: np.random.Generator, components: int = 0,
               decay: float = 2.0, zero_mean: bool = False) -> "FourierField":
        """Random real field: white noise on the 2K+1 grid, spectrally damped."""
        M = 2 * K + 1
        shape = ((components,) if components else ()) + (M,) * m
        field = cls.from_grid(rng.standard_normal(shape), K, components)
        k2 = (mode_cube(m, K) ** 2).sum(axis=0)
        field.coeffs *= (1.0 + k2) ** (-decay / 2)
        if zero_mean:
            center = (np.s_[:],) if components else ()
            field.coeffs[center + (K,) * m] = 0.0
        return field

    # -- basic queries ------------------------------------------------------

    def copy(self) -> "FourierField":
        return FourierField(self.m, self.K, self.coeffs.copy(), self.components)

    def mean(self):
        idx = (self.K,) * self.m
        if self.components:
            vals = self.coeffs[(np.s_[:],) + idx]
            return vals.real.copy()
        return float(self.coeffs[idx].real)

    def l2_norm(self) -> float:
        return float(np.sqrt((np.abs(self.coeffs) ** 2).sum()))

    def hermitian_defect(self) -> float:
        flipped = np.flip(self.coeffs, axis=tuple(range(self.coeffs.ndim - self.m, self.coeffs.ndim)))
        return float(np.abs(self.coeffs - np.conj(flipped)).max(initial=0.0))

    def hermitize(self) -> "FourierField":
        flipped = np.flip(self.coeffs, axis=tuple(range(self.coeffs.ndim - self.m, self.coeffs.ndim)))
        return FourierField(self.m, self.K, 0.5 * (self.coeffs + np.conj(flipped)), self.components)

    def change_bandlimit(self, K2: int) -> "FourierField":
        out = FourierField.zeros(self.m, K2, self.components)
        Kc = min(self.K, K2)
        src = tuple(slice(self.K - Kc, self.K + Kc + 1) for _ in range(self.m))
        dst = tuple(slice(K2 - Kc, K2 + Kc + 1) for _ in range(self.m))
        if self.components:
            out.coeffs[(np.s_[:],) + dst] = self.coeffs[(np.s_[:],) + src]
        else:
            out.coeffs[dst] = self.coeffs[src]
        return out

    # -- sampling -----------------------------------------------------------

    def grid_values(self, M: int | None = None) -> np.ndarray:
        """Real samples on the uniform M^m grid (y_idx = idx / M)."""
        if M is None:
            M = default_grid_points(self.K)
        if M < 2 * self.K + 1:
            raise FieldError("grid of %d points cannot hold bandlimit %d" % (M, self.K))
        sel = np.ix_(*([np.arange(-self.K, self.K + 1) % M] * self.m))
        axes = tuple(range(-self.m, 0))
        if self.components:
            full = np.zeros((self.components,) + (M,) * self.m, dtype=complex)
            for c in range(self.components):
                full[c][sel] = self.coeffs[c]
        else:
            full = np.zeros((M,) * self.m, dtype=complex)
            full[sel] = self.coeffs
        vals = np.fft.ifftn(full, axes=axes) * M**self.m
        return np.ascontiguousarray(vals.real)

    def evaluate(self, points: np.ndarray, mode_weights: np.ndarray | None = None) -> np.ndarray:
        """Direct summation at arbitrary torus points, shape (P, m).

        mode_weights, when given, scales each mode coefficient; it is indexed
        by the flattened (2K+1)^m cube in mode_cube order.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.m:
            raise FieldError("points must have %d columns" % self.m)
        flat = self.coeffs.reshape((self.components or 1, -1))
        nz = np.flatnonzero(np.abs(flat).max(axis=0) > 0.0)
        if nz.size == 0:
            out = np.zeros((points.shape[0], self.components or 1))
            return out[:, 0] if self.components == 0 else out
        modes = mode_cube(self.m, self.K).reshape(self.m, -1)[:, nz]
        vals = flat[:, nz].T  # (L, d)
        if mode_weights is not None:
            vals = vals * np.asarray(mode_weights, dtype=float).reshape(-1)[nz, None]
        out = np.empty((points.shape[0], self.components or 1))
        step = max(1, int(4e6 / max(1, nz.size)))
        for lo in range(0, points.shape[0], step):
            chunk = points[lo:lo + step]
            phase = np.exp(2j * np.pi * (chunk @ modes))
            out[lo:lo + step] = (phase @ vals).real
        return out[:, 0] if self.components == 0 else out

    # -- serialization ------------------------------------------------------

    def to_spectrum(self) -> dict:
        """Binary-free spectrum listing: one row per nonzero mode."""
        flat = self.coeffs.reshape((self.components or 1, -1))
        nz = np.flatnonzero(np.abs(flat).max(axis=0) > 0.0)
        modes = mode_cube(self.m, self.K).reshape(self.m, -1)[:, nz]
        rows = []
        for pos, col in enumerate(nz):
            k = [int(v) for v in modes[:, pos]]
            vals = []
            for c in range(self.components or 1):
                vals.extend([float(flat[c, col].real), float(flat[c, col].imag)])
            rows.append(k + vals)
        return {"m": self.m, "bandlimit": self.K, "components": self.components, "modes": rows}

    @classmethod
    def from_spectrum(cls, data: dict) -> "FourierField":
        m, K, d = data["m"], data["bandlimit"], data["components"]
        out = cls.zeros(m, K, d)
        for row in data["modes"]:
            k = tuple(int(v) + K for v in row[:m])
            vals = row[m:]
            if d:
                for c in range(d):
                    out.coeffs[(c,) + k] = complex(vals[2 * c], vals[2 * c + 1])
            else:
                out.coeffs[k] = complex(vals[0], vals[1])
        return out


def default_grid_points(K: int) -> int:
    """Dealiased collocation size: 3K+1 keeps |k|_inf <= K alias-free for
    quadratic products of bandlimit-K fields (aliases land at distance >= K+1)."""
    return max(3 * K + 1, 2 * K + 2)


@dataclass(frozen=True)
class CollocationGrid:
    """Uniform M^m sampling grid paired with a bandlimit K (needs M >= 2K+2)."""

    m: int
    K: int
    M: int

    def __post_init__(self):
        if self.M < 2 * self.K + 2:
            raise FieldError("collocation grid M=%d too small for bandlimit K=%d" % (self.M, self.K))

    @classmethod
    def for_bandlimit(cls, m: int, K: int) -> "CollocationGrid":
        return cls(m=m, K=K, M=default_grid_points(K))

    @property
    def cell_measure(self) -> float:
        return self.M ** (-self.m)

    def nodes(self) -> np.ndarray:
        axes = [np.arange(self.M) / self.M] * self.m
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def synthesize(self, field: FourierField) -> np.ndarray:
        return field.grid_values(self.M)

    def analyze(self, values: np.ndarray, components: int = 0) -> FourierField:
        return FourierField.from_grid(values, self.K, components)


# ---------------------------------------------------------------------------
# projected calculus


def projected_gradient(u: FourierField, pm: ProjectionMatrix) -> FourierField:
    """Gradient along the slice plane: mode k maps to 2 pi i (R^T k) c_k."""
    if u.components:
        raise FieldError("projected_gradient expects a scalar field")
    if pm.m != u.m:
        raise FieldError("matrix ambient dimension %d != field dimension %d" % (pm.m, u.m))
    W = projected_modes(pm, u.K)
    return FourierField(u.m, u.K, 2j * np.pi * W * u.coeffs[None], pm.n)

def projected_divergence(v: FourierField, pm: ProjectionMatrix) -> FourierField:
    """Divergence along the slice plane: mode k maps to 2 pi i (R^T k) . v_k."""
    if v.components != pm.n:
        raise FieldError("projected_divergence expects %d components, got %d" % (pm.n, v.components))
    W = projected_modes(pm, v.K)
    return FourierField(v.m, v.K, (2j * np.pi * W * v.coeffs).sum(axis=0), 0)


def torus_mean(u: FourierField):
    return u.mean()


def field_inner(f: FourierField, g: FourierField) -> float:
    """Torus integral of f*g for real fields (Parseval pairing)."""
    if f.components != g.components or f.K != g.K or f.m != g.m:
        raise FieldError("incompatible fields in inner product")
    return float(np.real(np.vdot(g.coeffs, f.coeffs)))


def green_identity_residual(phi: FourierField, theta: FourierField, pm: ProjectionMatrix) -> float:
    """Relative defect of the integration-by-parts identity on the torus.

    For band-limited fields the identity holds exactly, so the return value
    measures floating point noise only.
    """
    div = projected_divergence(phi, pm)
    grad = projected_gradient(theta, pm)
    s1 = field_inner(div, theta)
    s2 = float(np.real(np.vdot(grad.coeffs, phi.coeffs)))
    scale = div.l2_norm() * theta.l2_norm() + phi.l2_norm() * grad.l2_norm()
    return abs(s1 + s2) / max(scale, 1e-300)


def slice_sample(
    u: FourierField,
    pm: ProjectionMatrix,
    eta: float,
    x: np.ndarray,
    box: np.ndarray | None = None,
) -> np.ndarray:
    """Restrict u to the physical slice: u(R x / eta) at macro points x.

    With box = (h_1, ..., h_n) the pointwise trace is replaced by its exact
    average over the axis-aligned box of those side lengths centered at each
    x: mode k picks up the factor prod_j sinc((R^T k)_j h_j / eta).
    """
    if eta <= 0:
        raise FieldError("eta must be positive")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != pm.n:
        raise FieldError("macro points must have %d columns" % pm.n)
    y = (x @ pm.matrix.T) / eta
    y -= np.floor(y)  # keep phases O(1); the series is 1-periodic anyway
    weights = None
    if box is not None:
        box = np.asarray(box, dtype=float).reshape(-1)
        if box.size != pm.n or np.any(box < 0):
            raise FieldError("box must give a nonnegative width per macro axis")
        W = projected_modes(pm, u.K).reshape(pm.n, -1)
        weights = np.prod(np.sinc(W * (box[:, None] / eta)), axis=0)
    return u.evaluate(y, mode_weights=weights)


def ergodic_average(u: FourierField, pm: ProjectionMatrix, T: float) -> float | np.ndarray:
    """Exact average of the slice trace over the centered box (-T, T)^n.

    Mode k contributes c_k * prod_j sinc(2 (R^T k)_j T); the zero mode passes
    through with weight one, so the T -> infinity limit is the torus mean
    whenever the lattice criterion holds.
    """
    if T <= 0:
        raise FieldError("averaging half-width T must be positive")
    W = projected_modes(pm, u.K)
    weight = np.sinc(2.0 * W * T).prod(axis=0)
    if u.components:
        return np.real((u.coeffs * weight[None]).sum(axis=tuple(range(1, u.m + 1))))
    return float(np.real((u.coeffs * weight).sum()))


def ergodic_mode_bound(u: FourierField, pm: ProjectionMatrix, T: float) -> float:
    """Upper bound on |box average - torus mean| from per-mode sinc decay."""
    if u.components:
        raise FieldError("ergodic_mode_bound expects a scalar field")
    W = projected_modes(pm, u.K)
    damp = np.minimum(1.0, 1.0 / (2.0 * np.pi * np.abs(W) * T + 1e-300)).prod(axis=0)
    amp = np.abs(u.coeffs)
    amp = amp.copy()
    amp[(u.K,) * u.m] = 0.0
    return float((amp * damp).sum())


# ---------------------------------------------------------------------------
# gradient-subspace classification


@dataclass(frozen=True)
class ModeSplit:
    modes: tuple            # nonzero modes with nonzero coefficient
    labels: tuple           # "physical" | "orthogonal" | "mixed" per mode
    exact: bool             # True when decided in the algebraic tag's field

    @property
    def counts(self) -> dict:
        out = {"physical": 0, "orthogonal": 0, "mixed": 0}
        for lab in self.labels:
            out[lab] += 1
        return out

    def to_json(self) -> dict:
        return {
            "exact": self.exact,
            "counts": self.counts,
            "modes": [[list(k), lab] for k, lab in zip(self.modes, self.labels)],
        }


def subspace_split(u: FourierField, pm: ProjectionMatrix, tol: float = 1e-10) -> ModeSplit:
    """Classify each active mode by where its gradient sits.

    Mode k has gradient parallel to k, so it belongs to the physical-gradient
    subspace iff k lies in the slice plane (R R^T k = k) and to its orthogonal
    complement iff R^T k = 0.  Irrational slopes admit neither for k != 0,
    which is exactly what makes the slice traces equidistribute.
    """
    table = np.abs(u.coeffs)
    if u.components:
        table = table.max(axis=0)
    nz = np.argwhere(table > 0.0)
    center = np.array([u.K] * u.m)
    modes, labels = [], []
    exact = pm.tag is not None
    P = None
    if exact:
        P = pm.tag.projector()
        qzero = QuadraticNumber(Fraction(0), Fraction(0), pm.tag.radicand)
    for idx in nz:
        k = tuple(int(v) for v in (idx - center))
        if all(v == 0 for v in k):
            continue
        if exact:
            w = pm.tag.projected(k)
            in_orth = all(q.is_zero() for q in w)
            pk = [sum((P[i][j] * k[j] for j in range(u.m)), start=qzero) for i in range(u.m)]
            in_phys = all((pk[i] - QuadraticNumber(Fraction(k[i]), Fraction(0), pm.tag.radicand)).is_zero() for i in range(u.m))
        else:
            kv = np.array(k, dtype=float)
            w = pm.matrix.T @ kv
            in_orth = bool(np.linalg.norm(w) <= tol)
            in_phys = bool(np.linalg.norm(kv - pm.matrix @ (pm.matrix.T @ kv)) <= tol)
        if in_phys:
            labels.append("physical")
        elif in_orth:
            labels.append("orthogonal")
        else:
            labels.append("mixed")
        modes.append(k)
    return ModeSplit(modes=tuple(modes), labels=tuple(labels), exact=exact)


# ---------------------------------------------------------------------------
# dealiased products


def pointwise_product(u: FourierField, v: FourierField, bandlimit: int | None = None) -> FourierField:
    """Exact product of two real band-limited fields, then truncation.

    The product is computed on a grid large enough to hold bandlimit
    K_u + K_v without aliasing; the optional truncation is the only lossy
    step and is explicit in the signature.
    """
    if u.m != v.m:
        raise FieldError("fields live on different tori")
    if u.components and v.components:
        raise FieldError("use dot_product for two vector fields")
    B = u.K + v.K
    M = 2 * B + 1
    a = u.grid_values(M)
    b = v.grid_values(M)
    if v.components and not u.components:
        prod = a[None, ...] * b
        out = FourierField.from_grid(prod, B, v.components)
    elif u.components and not v.components:
        prod = a * b[None, ...]
        out = FourierField.from_grid(prod, B, u.components)
    else:
        out = FourierField.from_grid(a * b, B, 0)
    if bandlimit is not None and bandlimit != B:
        out = out.change_bandlimit(bandlimit)
    return out


def dot_product(u: FourierField, v: FourierField, bandlimit: int | None = None) -> FourierField:
    """Pointwise u . v of two real vector fields, exact then truncated."""
    if u.components == 0 or u.components != v.components or u.m != v.m:
        raise FieldError("dot_product expects two vector fields with equal components")
    B = u.K + v.K
    M = 2 * B + 1
    a = u.grid_values(M)
    b = v.grid_values(M)
    out = FourierField.from_grid((a * b).sum(axis=0), B, 0)
    if bandlimit is not None and bandlimit != B:
        out = out.change_bandlimit(bandlimit)
    return out
