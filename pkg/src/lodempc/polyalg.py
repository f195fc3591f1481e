"""Exact univariate polynomial arithmetic over the rationals, polynomial
matrices, and Smith normal form with transformation matrices.

The indeterminate is written ``d`` and stands for the time-differentiation
operator, so a matrix of these polynomials encodes a system of linear
constant-coefficient ODEs.  Coefficients are :class:`fractions.Fraction`
throughout: every operation in this module is exact, which keeps the Smith
reduction and the nullspace extraction free of pivoting and rounding
artifacts.  All values are immutable and all functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

__all__ = [
    "NEG_INFINITY",
    "Poly",
    "PolyMatrix",
    "SmithDecomposition",
    "ZERO",
    "ONE",
    "D",
    "smith_normal_form",
    "right_nullspace_columns",
]

#: Degree assigned to the zero polynomial, so degree comparisons just work.
NEG_INFINITY = float("-inf")


@dataclass(frozen=True)
class Poly:
    """A univariate polynomial with exact rational coefficients.

    ``coeffs[k]`` multiplies the k-th power of the indeterminate.  Trailing
    zeros are stripped on construction, so the zero polynomial stores an
    empty tuple and equality/hashing see a canonical form.
    """

    coeffs: tuple[Fraction, ...] = ()

    def __post_init__(self) -> None:
        coeffs = tuple(Fraction(c) for c in self.coeffs)
        while coeffs and coeffs[-1] == 0:
            coeffs = coeffs[:-1]
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def const(cls, value) -> "Poly":
        return cls((Fraction(value),))

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    @property
    def is_constant(self) -> bool:
        return len(self.coeffs) <= 1

    @property
    def degree(self):
        """Degree of the polynomial; ``-inf`` for the zero polynomial."""
        return len(self.coeffs) - 1 if self.coeffs else NEG_INFINITY

    @property
    def leading_coeff(self) -> Fraction:
        return self.coeffs[-1] if self.coeffs else Fraction(0)

    def __add__(self, other: "Poly") -> "Poly":
        if not isinstance(other, Poly):
            return NotImplemented
        a, b = self.coeffs, other.coeffs
        if len(a) < len(b):
            a, b = b, a
        out = list(a)
        for k, c in enumerate(b):
            out[k] += c
        return Poly(tuple(out))

    def __neg__(self) -> "Poly":
        return Poly(tuple(-c for c in self.coeffs))

    def __sub__(self, other: "Poly") -> "Poly":
        if not isinstance(other, Poly):
            return NotImplemented
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, Poly):
            if self.is_zero or other.is_zero:
                return Poly()
            out = [Fraction(0)] * (len(self.coeffs) + len(other.coeffs) - 1)
            for i, a in enumerate(self.coeffs):
                if a == 0:
                    continue
                for j, b in enumerate(other.coeffs):
                    out[i + j] += a * b
            return Poly(tuple(out))
        return self.scaled(other)

    __rmul__ = __mul__

    def __pow__(self, exponent: int) -> "Poly":
        if exponent < 0:
            raise ValueError("negative powers are not polynomials")
        result = ONE
        for _ in range(exponent):
            result = result * self
        return result

    def scaled(self, factor) -> "Poly":
        factor = Fraction(factor)
        return Poly(tuple(c * factor for c in self.coeffs))

    def __divmod__(self, other: "Poly") -> tuple["Poly", "Poly"]:
        """Euclidean division: returns (q, r) with self = q*other + r and
        deg r < deg other."""
        if not isinstance(other, Poly):
            return NotImplemented
        if other.is_zero:
            raise ZeroDivisionError("polynomial division by the zero polynomial")
        deg_b = len(other.coeffs) - 1
        if len(self.coeffs) - 1 < deg_b:
            return Poly(), self
        rem = list(self.coeffs)
        lead = other.coeffs[-1]
        quot = [Fraction(0)] * (len(rem) - deg_b)
        for k in range(len(rem) - deg_b - 1, -1, -1):
            c = rem[k + deg_b] / lead
            if c == 0:
                continue
            quot[k] = c
            for j, b in enumerate(other.coeffs):
                rem[k + j] -= c * b
        return Poly(tuple(quot)), Poly(tuple(rem[:deg_b]))

    def monic(self) -> "Poly":
        if self.is_zero or self.leading_coeff == 1:
            return self
        return self.scaled(1 / self.leading_coeff)

    def __str__(self) -> str:
        if self.is_zero:
            return "0"
        parts: list[str] = []
        for k, c in enumerate(self.coeffs):
            if c == 0:
                continue
            mag = abs(c)
            if k == 0:
                body = str(mag)
            else:
                var = "d" if k == 1 else f"d^{k}"
                body = var if mag == 1 else f"{mag} {var}"
            if not parts:
                parts.append(body if c > 0 else f"-{body}")
            else:
                parts.append(f"+ {body}" if c > 0 else f"- {body}")
        return " ".join(parts)


ZERO = Poly()
ONE = Poly((1,))
#: The differentiation symbol d/dt.
D = Poly((0, 1))


@dataclass(frozen=True)
class PolyMatrix:
    """Dense matrix of :class:`Poly` entries, stored row-major."""

    rows: int
    cols: int
    entries: tuple[Poly, ...]

    def __post_init__(self) -> None:
        if self.rows < 0 or self.cols < 0:
            raise ValueError("matrix dimensions must be non-negative")
        if len(self.entries) != self.rows * self.cols:
            raise ValueError(
                f"expected {self.rows * self.cols} entries, got {len(self.entries)}"
            )
        if not all(isinstance(e, Poly) for e in self.entries):
            raise TypeError("matrix entries must be Poly instances")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence]) -> "PolyMatrix":
        """Build from nested sequences; scalar entries are coerced to Poly."""
        n_rows = len(rows)
        n_cols = len(rows[0]) if n_rows else 0
        flat: list[Poly] = []
        for row in rows:
            if len(row) != n_cols:
                raise ValueError("ragged rows")
            for e in row:
                flat.append(e if isinstance(e, Poly) else Poly.const(e))
        return cls(n_rows, n_cols, tuple(flat))

    @classmethod
    def identity(cls, n: int) -> "PolyMatrix":
        return cls(n, n, tuple(ONE if i == j else ZERO for i in range(n) for j in range(n)))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "PolyMatrix":
        return cls(rows, cols, (ZERO,) * (rows * cols))

    def __getitem__(self, key: tuple[int, int]) -> Poly:
        i, j = key
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise IndexError(f"index {key} out of range for {self.rows}x{self.cols} matrix")
        return self.entries[i * self.cols + j]

    def row(self, i: int) -> tuple[Poly, ...]:
        return self.entries[i * self.cols : (i + 1) * self.cols]

    def column(self, j: int) -> tuple[Poly, ...]:
        return tuple(self.entries[i * self.cols + j] for i in range(self.rows))

    @property
    def is_zero(self) -> bool:
        return all(e.is_zero for e in self.entries)

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        if self.cols != other.rows:
            raise ValueError(
                f"cannot multiply {self.rows}x{self.cols} by {other.rows}x{other.cols}"
            )
        flat: list[Poly] = []
        for i in range(self.rows):
            for j in range(other.cols):
                acc = ZERO
                for k in range(self.cols):
                    a = self[i, k]
                    if a.is_zero:
                        continue
                    b = other[k, j]
                    if b.is_zero:
                        continue
                    acc = acc + a * b
                flat.append(acc)
        return PolyMatrix(self.rows, other.cols, tuple(flat))

    def determinant(self) -> Poly:
        """Exact determinant by cofactor expansion (intended for small dims)."""
        if self.rows != self.cols:
            raise ValueError("determinant of a non-square matrix")
        if self.rows == 0:
            return ONE
        grid = [list(self.row(i)) for i in range(self.rows)]
        return _det(grid)

    def to_text(self) -> str:
        """One row per line, entries separated by ';'."""
        return "\n".join("; ".join(str(e) for e in self.row(i)) for i in range(self.rows))


def _det(grid: list[list[Poly]]) -> Poly:
    n = len(grid)
    if n == 1:
        return grid[0][0]
    total = ZERO
    for j, entry in enumerate(grid[0]):
        if entry.is_zero:
            continue
        minor = [row[:j] + row[j + 1 :] for row in grid[1:]]
        term = entry * _det(minor)
        total = total + term if j % 2 == 0 else total - term
    return total


@dataclass(frozen=True)
class SmithDecomposition:
    """Factorization Q·H·V = D with unimodular Q, V.

    D is diagonal (in the rectangular sense); its nonzero diagonal entries
    are monic and each divides the next.
    """

    Q: PolyMatrix
    D: PolyMatrix
    V: PolyMatrix

    @property
    def rank(self) -> int:
        return sum(
            1
            for i in range(min(self.D.rows, self.D.cols))
            if not self.D[i, i].is_zero
        )

    def invariant_factors(self) -> tuple[Poly, ...]:
        return tuple(
            self.D[i, i]
            for i in range(min(self.D.rows, self.D.cols))
            if not self.D[i, i].is_zero
        )


def smith_normal_form(h: PolyMatrix) -> SmithDecomposition:
    """Smith normal form of a polynomial matrix over Q[d].

    Classic row/column reduction for a Euclidean domain.  The pivot is always
    the smallest-degree nonzero entry of the trailing submatrix, ties broken
    by lowest (row, col); remainders from Euclidean division shrink the pivot
    degree until the pivot's row and column are clear, then a non-divisible
    trailing entry (if any) is folded into the pivot row and reduction
    continues.  Diagonal entries are normalized monic by scaling the pivot
    row, mirrored into Q, so Q and V stay unimodular.
    """
    m, n = h.rows, h.cols
    if m == 0 or n == 0:
        raise ValueError("cannot reduce an empty matrix")
    a = [list(h.row(i)) for i in range(m)]
    q = [[ONE if i == j else ZERO for j in range(m)] for i in range(m)]
    v = [[ONE if i == j else ZERO for j in range(n)] for i in range(n)]

    for k in range(min(m, n)):
        if not _reduce_pivot(a, q, v, k, m, n):
            break
        lead = a[k][k].leading_coeff
        if lead != 1:
            inv = 1 / lead
            a[k] = [p.scaled(inv) for p in a[k]]
            q[k] = [p.scaled(inv) for p in q[k]]

    flatten = lambda grid: tuple(p for row in grid for p in row)
    return SmithDecomposition(
        Q=PolyMatrix(m, m, flatten(q)),
        D=PolyMatrix(m, n, flatten(a)),
        V=PolyMatrix(n, n, flatten(v)),
    )


def _pivot_position(a, k: int, m: int, n: int):
    best = None
    best_deg = None
    for i in range(k, m):
        for j in range(k, n):
            e = a[i][j]
            if e.is_zero:
                continue
            if best is None or e.degree < best_deg:
                best, best_deg = (i, j), e.degree
    return best


def _swap_cols(grid, j1: int, j2: int) -> None:
    for row in grid:
        row[j1], row[j2] = row[j2], row[j1]


def _row_sub(grid, i: int, k: int, factor: Poly) -> None:
    grid[i] = [x - factor * y for x, y in zip(grid[i], grid[k])]


def _col_sub(grid, j: int, k: int, factor: Poly) -> None:
    for row in grid:
        row[j] = row[j] - factor * row[k]


def _non_divisible_entry(a, k: int, m: int, n: int):
    pivot = a[k][k]
    for i in range(k + 1, m):
        for j in range(k + 1, n):
            if a[i][j].is_zero:
                continue
            if not divmod(a[i][j], pivot)[1].is_zero:
                return i, j
    return None


def _reduce_pivot(a, q, v, k: int, m: int, n: int) -> bool:
    """Drive the trailing submatrix so a[k][k] is the sole nonzero in its
    row/column and divides everything below-right.  Returns False when the
    trailing submatrix is entirely zero."""
    while True:
        pos = _pivot_position(a, k, m, n)
        if pos is None:
            return False
        pi, pj = pos
        if pi != k:
            a[k], a[pi] = a[pi], a[k]
            q[k], q[pi] = q[pi], q[k]
        if pj != k:
            _swap_cols(a, k, pj)
            _swap_cols(v, k, pj)
        pivot = a[k][k]

        dirty = False
        for i in range(k + 1, m):
            if a[i][k].is_zero:
                continue
            quot, rem = divmod(a[i][k], pivot)
            if not quot.is_zero:
                _row_sub(a, i, k, quot)
                _row_sub(q, i, k, quot)
            if not rem.is_zero:
                dirty = True
        for j in range(k + 1, n):
            if a[k][j].is_zero:
                continue
            quot, rem = divmod(a[k][j], pivot)
            if not quot.is_zero:
                _col_sub(a, j, k, quot)
                _col_sub(v, j, k, quot)
            if not rem.is_zero:
                dirty = True
        if dirty:
            continue

        offender = _non_divisible_entry(a, k, m, n)
        if offender is None:
            return True
        # Fold the offending row into the pivot row; the next division pass
        # strictly lowers the pivot degree, so this terminates.
        oi = offender[0]
        a[k] = [x + y for x, y in zip(a[k], a[oi])]
        q[k] = [x + y for x, y in zip(q[k], q[oi])]


def right_nullspace_columns(h: PolyMatrix, dec: SmithDecomposition) -> PolyMatrix:
    """Columns of V spanning the right nullspace of h.

    These are the columns of V past the number of nonzero diagonal entries
    of D: for those j, h·V[:, j] = Q⁻¹·D[:, j] = 0.  The result is verified
    exactly before returning.
    """
    r = dec.rank
    n = h.cols
    width = n - r
    entries = tuple(dec.V[i, j] for i in range(n) for j in range(r, n))
    null = PolyMatrix(n, width, entries)
    if width and not (h @ null).is_zero:
        raise AssertionError("nullspace columns failed exact verification")
    return null
