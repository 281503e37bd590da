"""Cut-and-projection matrices and exact irrationality certificates.

A projection setup is an m x n real matrix R with orthonormal columns that
maps macroscopic directions into the m-torus.  Whether the induced slice
actually fills the torus is decided by the lattice criterion: R^T k must be
nonzero for every nonzero integer vector k.  For matrices whose entries live
in a real quadratic field Q(sqrt(d)) that criterion can be certified exactly
with rational arithmetic; otherwise we fall back to a finite lattice scan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class ProjectionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# exact arithmetic in Q(sqrt(d))


@dataclass(frozen=True)
class QuadraticNumber:
    """Exact element a + b*sqrt(d), with a, b rational and d a fixed radicand.

    d = 0 denotes a plain rational (b must be 0 then).  Arithmetic between
    numbers with different nonzero radicands is refused; mixing with d = 0
    is fine.
    """

    a: Fraction
    b: Fraction
    d: int

    def __post_init__(self):
        if self.d < 0:
            raise ProjectionError("radicand must be a nonnegative integer")
        if self.d == 0 and self.b != 0:
            raise ProjectionError("rational entry cannot carry a sqrt part")

    @staticmethod
    def rational(x) -> "QuadraticNumber":
        return QuadraticNumber(Fraction(x), Fraction(0), 0)

    def _join(self, other: "QuadraticNumber") -> int:
        if self.d and other.d and self.d != other.d:
            raise ProjectionError("mixed radicands %d and %d" % (self.d, other.d))
        return self.d or other.d

    def __add__(self, other):
        d = self._join(other)
        return QuadraticNumber(self.a + other.a, self.b + other.b, d)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return QuadraticNumber(-self.a, -self.b, self.d)

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            return QuadraticNumber(self.a * other, self.b * other, self.d)
        d = self._join(other)
        return QuadraticNumber(
            self.a * other.a + d * self.b * other.b,
            self.a * other.b + self.b * other.a,
            d,
        )

    __rmul__ = __mul__

    def inverse(self) -> "QuadraticNumber":
        # 1/(a + b sqrt d) = (a - b sqrt d) / (a^2 - d b^2)
        norm = self.a * self.a - self.d * self.b * self.b
        if norm == 0:
            raise ZeroDivisionError("quadratic number has no inverse")
        return QuadraticNumber(self.a / norm, -self.b / norm, self.d)

    def is_zero(self) -> bool:
        return self.a == 0 and self.b == 0

    def __float__(self) -> float:
        return float(self.a) + float(self.b) * math.sqrt(self.d)


def _qn_dot(ks, column) -> QuadraticNumber:
    acc = QuadraticNumber.rational(0)
    for k, entry in zip(ks, column):
        acc = acc + entry * Fraction(k)
    return acc


def _qn_matmul(A, B):
    rows, inner, cols = len(A), len(B), len(B[0])
    out = []
    for i in range(rows):
        row = []
        for j in range(cols):
            acc = QuadraticNumber.rational(0)
            for t in range(inner):
                acc = acc + A[i][t] * B[t][j]
            row.append(acc)
        out.append(row)
    return out


def _qn_solve(A, B):
    """Solve A X = B by Gaussian elimination in the quadratic field."""
    n = len(A)
    aug = [list(A[i]) + list(B[i]) for i in range(n)]
    width = len(aug[0])
    for col in range(n):
        piv = next((r for r in range(col, n) if not aug[r][col].is_zero()), None)
        if piv is None:
            raise ProjectionError("singular Gram matrix in exact projector")
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = aug[col][col].inverse()
        aug[col] = [entry * inv for entry in aug[col]]
        for r in range(n):
            if r != col and not aug[r][col].is_zero():
                f = aug[r][col]
                aug[r] = [aug[r][j] - f * aug[col][j] for j in range(width)]
    return [row[n:] for row in aug]


# ---------------------------------------------------------------------------
# tags and matrices


@dataclass(frozen=True)
class AlgebraicTag:
    """Exact pre-normalization column entries of R in a quadratic field.

    Columns are taken up to (possibly irrational) positive scale: the lattice
    zero test R^T k = 0 is scale invariant per column, and so is the plane
    projector built from them, which is all the exact layer needs.
    """

    radicand: int
    columns: tuple  # tuple of columns; each column is a tuple of QuadraticNumber
    label: str = ""

    @property
    def m(self) -> int:
        return len(self.columns[0])

    @property
    def n(self) -> int:
        return len(self.columns)

    def column_floats(self) -> np.ndarray:
        return np.array([[float(e) for e in col] for col in self.columns]).T

    def projector(self):
        """Exact m x m projector onto the column span, as QuadraticNumbers."""
        V = [[self.columns[j][i] for j in range(self.n)] for i in range(self.m)]
        Vt = [[V[i][j] for i in range(self.m)] for j in range(self.n)]
        gram = _qn_matmul(Vt, V)
        gram_inv_vt = _qn_solve(gram, Vt)
        return _qn_matmul(V, gram_inv_vt)

    def projected(self, k):
        """Exact R^T k up to per-column positive scale (n quadratic numbers)."""
        return [_qn_dot(k, col) for col in self.columns]


def make_tag(radicand: int, columns, label: str = "") -> AlgebraicTag:
    """Build a tag from (rational, coefficient-of-sqrt) pairs.

    columns is a sequence of columns, each a sequence of (a, b) pairs where
    the entry value is a + b*sqrt(radicand); a and b accept anything Fraction
    does (ints, strings like '1/2').
    """
    cols = tuple(
        tuple(QuadraticNumber(Fraction(a), Fraction(b), radicand) for a, b in col)
        for col in columns
    )
    return AlgebraicTag(radicand=radicand, columns=cols, label=label)


@dataclass(frozen=True)
class ProjectionMatrix:
    matrix: np.ndarray          # (m, n), orthonormal columns
    tag: AlgebraicTag | None = None
    name: str = ""

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=float))
        if self.matrix.ndim != 2:
            raise ProjectionError("matrix must be two-dimensional")


def new_projection(entries, tag: AlgebraicTag | None = None, name: str = "") -> ProjectionMatrix:
    """Validate and orthonormalize an m x n slope matrix.

    Columns are orthonormalized by modified Gram-Schmidt; inputs that deviate
    from orthonormality by more than 1e-6 are still accepted but the result is
    reported through the returned matrix, not silently equal to the input.
    The algebraic tag survives only if orthonormalization reduced to a
    per-column rescaling (i.e. the input columns were already orthogonal), so
    the exact entries still describe the same directions.
    """
    A = np.array(entries, dtype=float)
    if A.ndim != 2:
        raise ProjectionError("entries must form an m x n matrix")
    m, n = A.shape
    if n < 1:
        raise ProjectionError("need at least one column")
    if m <= n:
        raise ProjectionError("matrix must be tall: m > n (got %d x %d)" % (m, n))
    if not np.all(np.isfinite(A)):
        raise ProjectionError("entries must be finite")

    Q = A.copy()
    for j in range(n):
        for i in range(j):
            Q[:, j] -= (Q[:, i] @ Q[:, j]) * Q[:, i]
        norm = np.linalg.norm(Q[:, j])
        if norm <= 1e-12 * max(1.0, np.linalg.norm(A[:, j])):
            raise ProjectionError("rank-deficient input: column %d lies in the span of the previous ones" % j)
        Q[:, j] /= norm

    if tag is not None:
        T = tag.column_floats()
        if T.shape != (m, n):
            raise ProjectionError("algebraic tag shape %s does not match matrix %s" % (T.shape, (m, n)))
        for j in range(n):
            direction = T[:, j] / np.linalg.norm(T[:, j])
            if np.linalg.norm(direction - Q[:, j]) > 1e-8:
                tag = None  # Gram-Schmidt mixed the columns; exact entries no longer apply
                break
    return ProjectionMatrix(matrix=Q, tag=tag, name=name)


def physical_projector(pm: ProjectionMatrix) -> np.ndarray:
    """The m x m orthogonal projector R R^T onto the physical slice plane."""
    R = pm.matrix
    return R @ R.T


# ---------------------------------------------------------------------------
# lattice criterion


@dataclass(frozen=True)
class CriterionReport:
    requested_radius: int
    ball_radius: int                  # radius actually scanned
    min_projected_norm: float
    worst_k: tuple
    certificate: str                  # "exact-pass" | "exact-fail" | "numeric-only"
    witness: tuple | None = None      # integer k with R^T k = 0, for exact-fail
    shell_minima: tuple = ()          # (radius, min |R^T k| on that shell)

    def passed(self) -> bool:
        return self.certificate != "exact-fail"

    def to_json(self) -> dict:
        return {
            "requested_radius": self.requested_radius,
            "ball_radius": self.ball_radius,
            "min_projected_norm": self.min_projected_norm,
            "worst_k": list(self.worst_k),
            "certificate": self.certificate,
            "witness": None if self.witness is None else list(self.witness),
            "shell_minima": [[r, v] for r, v in self.shell_minima],
        }


_SCAN_BUDGET = 600_000  # lattice points; keeps the scan well under a second


def _max_scan_radius(m: int, requested: int) -> int:
    s = 1
    while (2 * (s + 1) + 1) ** m <= _SCAN_BUDGET and s < requested:
        s += 1
    return min(s, requested)


def _rational_kernel_basis(rows, m):
    """Kernel basis over Q of a small rational matrix given as Fraction rows."""
    mat = [list(r) for r in rows]
    pivots = []
    rank = 0
    for col in range(m):
        piv = next((r for r in range(rank, len(mat)) if mat[r][col] != 0), None)
        if piv is None:
            continue
        mat[rank], mat[piv] = mat[piv], mat[rank]
        inv = Fraction(1) / mat[rank][col]
        mat[rank] = [x * inv for x in mat[rank]]
        for r in range(len(mat)):
            if r != rank and mat[r][col] != 0:
                f = mat[r][col]
                mat[r] = [mat[r][j] - f * mat[rank][j] for j in range(m)]
        pivots.append(col)
        rank += 1
    free = [c for c in range(m) if c not in pivots]
    basis = []
    for fc in free:
        vec = [Fraction(0)] * m
        vec[fc] = Fraction(1)
        for r, pc in enumerate(pivots):
            vec[pc] = -mat[r][fc]
        basis.append(vec)
    return basis


def _integer_witness(vec) -> tuple:
    scale = math.lcm(*[f.denominator for f in vec])
    ints = [int(f * scale) for f in vec]
    g = math.gcd(*[abs(v) for v in ints if v] or [1])
    ints = [v // g for v in ints]
    lead = next(v for v in ints if v)
    if lead < 0:
        ints = [-v for v in ints]
    return tuple(ints)


def check_criterion(pm: ProjectionMatrix, ball_radius: int = 200) -> CriterionReport:
    """Decide whether R^T k stays away from zero for integer k != 0.

    With an algebraic tag the verdict is exact and global: R^T k = 0 is a
    rational linear system (split an entry a + b*sqrt(d) into its two rational
    coordinates), so the criterion holds iff that 2n x m system has trivial
    kernel.  The numeric layer scans max-norm shells up to ball_radius and
    records the smallest projected norm seen, which doubles as a small-divisor
    diagnostic.
    """
    if ball_radius < 1:
        raise ProjectionError("ball_radius must be >= 1")
    m, n = pm.m, pm.n
    scan_radius = _max_scan_radius(m, ball_radius)

    R = pm.matrix
    axes = [np.arange(-scan_radius, scan_radius + 1)] * m
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    shell = np.abs(grid).max(axis=1)
    grid, shell = grid[shell > 0], shell[shell > 0]
    norms = np.linalg.norm(grid @ R, axis=1)
    idx = int(np.argmin(norms))
    best = float(norms[idx])
    best_k = tuple(int(v) for v in grid[idx])
    mins = np.full(scan_radius + 1, np.inf)
    np.minimum.at(mins, shell, norms)
    shell_minima = [(s, float(mins[s])) for s in range(1, scan_radius + 1)]

    certificate = "numeric-only"
    witness = None
    if pm.tag is not None:
        rows = []
        for col in pm.tag.columns:
            rows.append([e.a for e in col])
            if pm.tag.radicand:
                rows.append([e.b for e in col])
        basis = _rational_kernel_basis(rows, m)
        if not basis:
            certificate = "exact-pass"
        else:
            certificate = "exact-fail"
            witness = _integer_witness(basis[0])
            projected = pm.tag.projected(witness)
            if not all(q.is_zero() for q in projected):
                raise ProjectionError("internal: exact witness failed re-verification")
            numeric = float(np.linalg.norm(np.array(witness) @ R))
            if numeric < best:
                best, best_k = numeric, witness

    return CriterionReport(
        requested_radius=ball_radius,
        ball_radius=scan_radius,
        min_projected_norm=best,
        worst_k=best_k,
        certificate=certificate,
        witness=witness,
        shell_minima=tuple(shell_minima),
    )


# ---------------------------------------------------------------------------
# catalogue


def builtin_matrices() -> dict:
    """Named projection setups with exact algebraic tags.

    fibonacci    : line of slope golden ratio in the 2-torus (m=2, n=1)
    silver-mean  : line of slope 1 + sqrt(2) (m=2, n=1)
    octagonal    : plane in the 4-torus from the 8-fold symmetric star (m=4, n=2)
    """
    out = {}

    tag = make_tag(5, [[(1, 0), (Fraction(1, 2), Fraction(1, 2))]], label="Z[phi]")
    phi = (1 + math.sqrt(5)) / 2
    out["fibonacci"] = new_projection([[1.0], [phi]], tag=tag, name="fibonacci")

    tag = make_tag(2, [[(1, 0), (1, 1)]], label="Z[sqrt2]")
    out["silver-mean"] = new_projection([[1.0], [1 + math.sqrt(2)]], tag=tag, name="silver-mean")

    # Columns j -> (cos(j*pi/4))_j and (sin(j*pi/4))_j for j = 0..3, which are
    # already orthogonal; entries are 0, +-1/2 and +-sqrt(2)/2 after scaling.
    h = Fraction(1, 2)
    tag = make_tag(
        2,
        [
            [(1, 0), (0, h), (0, 0), (0, -h)],
            [(0, 0), (0, h), (1, 0), (0, h)],
        ],
        label="Z[sqrt2]",
    )
    r2 = math.sqrt(2) / 2
    cols = np.array([[1.0, 0.0], [r2, r2], [0.0, 1.0], [-r2, r2]])
    out["octagonal"] = new_projection(cols, tag=tag, name="octagonal")
    return out


# ---------------------------------------------------------------------------
# config round trip


def matrix_to_config(pm: ProjectionMatrix) -> dict:
    cfg = {
        "m": pm.m,
        "n": pm.n,
        "entries": [[float(v) for v in row] for row in pm.matrix],
        "name": pm.name,
    }
    if pm.tag is not None:
        cfg["algebraic_tag"] = {
            "radicand": pm.tag.radicand,
            "label": pm.tag.label,
            "columns": [
                [[str(e.a), str(e.b)] for e in col] for col in pm.tag.columns
            ],
        }
    return cfg


def matrix_from_config(cfg: dict) -> ProjectionMatrix:
    if "name" in cfg and "entries" not in cfg:
        catalogue = builtin_matrices()
        name = cfg["name"]
        if name not in catalogue:
            raise ProjectionError(
                "unknown catalogue matrix %r (have: %s)" % (name, ", ".join(sorted(catalogue)))
            )
        return catalogue[name]
    tag = None
    if "algebraic_tag" in cfg and cfg["algebraic_tag"]:
        t = cfg["algebraic_tag"]
        tag = make_tag(
            int(t["radicand"]),
            [[(Fraction(a), Fraction(b)) for a, b in col] for col in t["columns"]],
            label=t.get("label", ""),
        )
    return new_projection(cfg["entries"], tag=tag, name=cfg.get("name", ""))
