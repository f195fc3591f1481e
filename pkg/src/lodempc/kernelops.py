"""Differential operators applied in closed form to the squared-exponential
kernel.

Writing ``u = t - t'`` and ``lam = 1/lengthscale_sq``, everything handled here
is a polynomial ``p(u, lam)`` with exact rational coefficients multiplying the
Gaussian envelope ``exp(-lam*u^2/2)``; the signal variance scales a whole
entry at evaluation time.  This family is closed under d/dt and d/dt':

    d/dt  [p * g] = (dp/du - lam*u*p) * g
    d/dt' [p * g] = (-dp/du + lam*u*p) * g

so a polynomial-matrix operator applied to both arguments of the base kernel
stays inside the family.  Coefficient bookkeeping is exact (Fractions);
floats enter only at evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numpy.polynomial import polynomial as npoly

from .polyalg import Poly, PolyMatrix

__all__ = [
    "Hyperparams",
    "GaussPolyTerm",
    "OperatorKernel",
    "se_kernel",
    "apply_operator_pair",
    "build_operator_kernel",
]


@dataclass(frozen=True)
class Hyperparams:
    """Kernel hyperparameters shared by all channels.

    ``signal_variance`` is sigma_f^2, ``lengthscale_sq`` is the squared
    lengthscale of the latent squared-exponential process, and ``jitter``
    is the variance substituted for exact (noise-free) constraints.
    """

    signal_variance: float = 1.0
    lengthscale_sq: float = 1.0
    jitter: float = 1e-8

    def __post_init__(self) -> None:
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "lengthscale_sq", float(self.lengthscale_sq))
        object.__setattr__(self, "jitter", float(self.jitter))
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if not self.lengthscale_sq > 0:
            raise ValueError("lengthscale_sq must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")

    @property
    def lam(self) -> float:
        return 1.0 / self.lengthscale_sq


@dataclass(frozen=True)
class GaussPolyTerm:
    """``p(u, lam) * exp(-lam*u^2/2)`` with p stored exactly.

    ``coeffs`` maps (u_power, lam_power) to a nonzero Fraction.  Treat
    instances as immutable; all operations return new terms.
    """

    coeffs: dict

    def __post_init__(self) -> None:
        clean = {
            (int(a), int(b)): Fraction(c)
            for (a, b), c in self.coeffs.items()
            if c != 0
        }
        object.__setattr__(self, "coeffs", clean)

    @classmethod
    def zero(cls) -> "GaussPolyTerm":
        return cls({})

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    def plus(self, other: "GaussPolyTerm") -> "GaussPolyTerm":
        out = dict(self.coeffs)
        for key, c in other.coeffs.items():
            out[key] = out.get(key, Fraction(0)) + c
        return GaussPolyTerm(out)

    def scaled(self, factor) -> "GaussPolyTerm":
        factor = Fraction(factor)
        return GaussPolyTerm({key: c * factor for key, c in self.coeffs.items()})

    def diff_first(self) -> "GaussPolyTerm":
        """Derivative in the first kernel argument t."""
        out: dict = {}
        for (a, b), c in self.coeffs.items():
            if a:
                _acc(out, (a - 1, b), a * c)
            _acc(out, (a + 1, b + 1), -c)
        return GaussPolyTerm(out)

    def diff_second(self) -> "GaussPolyTerm":
        """Derivative in the second kernel argument t'."""
        out: dict = {}
        for (a, b), c in self.coeffs.items():
            if a:
                _acc(out, (a - 1, b), -a * c)
            _acc(out, (a + 1, b + 1), c)
        return GaussPolyTerm(out)

    def u_coefficients(self, lam: float) -> np.ndarray:
        """Collapse the lam powers at a numeric lam; ascending powers of u."""
        if self.is_zero:
            return np.zeros(1)
        deg = max(a for a, _ in self.coeffs)
        out = np.zeros(deg + 1)
        for (a, b), c in self.coeffs.items():
            out[a] += float(c) * lam**b
        return out

    def evaluate(self, u: float, lam: float) -> float:
        return float(npoly.polyval(u, self.u_coefficients(lam))) * math.exp(
            -0.5 * lam * u * u
        )

    def __str__(self) -> str:
        if self.is_zero:
            return "0"
        parts: list[str] = []
        for (a, b) in sorted(self.coeffs):
            c = self.coeffs[(a, b)]
            mag = abs(c)
            pieces = []
            if b:
                pieces.append("lam" if b == 1 else f"lam^{b}")
            if a:
                pieces.append("u" if a == 1 else f"u^{a}")
            if not pieces or mag != 1:
                pieces.insert(0, str(mag))
            body = " ".join(pieces)
            if not parts:
                parts.append(body if c > 0 else f"-{body}")
            else:
                parts.append(f"+ {body}" if c > 0 else f"- {body}")
        return f"({' '.join(parts)}) exp(-lam u^2/2)"


def _acc(table: dict, key: tuple[int, int], value: Fraction) -> None:
    table[key] = table.get(key, Fraction(0)) + value


def se_kernel() -> GaussPolyTerm:
    """The base squared-exponential kernel, i.e. p = 1."""
    return GaussPolyTerm({(0, 0): Fraction(1)})


def apply_operator_pair(op_t: Poly, op_tp: Poly, base: GaussPolyTerm) -> GaussPolyTerm:
    """Apply op_t(d/dt) to the first argument and op_tp(d/dt') to the second."""
    acc = GaussPolyTerm.zero()
    cur = base
    for k, c in enumerate(op_t.coeffs):
        if c:
            acc = acc.plus(cur.scaled(c))
        if k + 1 < len(op_t.coeffs):
            cur = cur.diff_first()
    out = GaussPolyTerm.zero()
    cur = acc
    for k, c in enumerate(op_tp.coeffs):
        if c:
            out = out.plus(cur.scaled(c))
        if k + 1 < len(op_tp.coeffs):
            cur = cur.diff_second()
    return out


@dataclass(frozen=True, eq=False)
class OperatorKernel:
    """Matrix-valued kernel K(t, t') = V(d/dt) k_se V(d/dt')^T, entrywise in
    closed form.  ``entries[i][j]`` is the (i, j) channel-pair term."""

    entries: tuple[tuple[GaussPolyTerm, ...], ...]

    @property
    def size(self) -> int:
        return len(self.entries)

    def entry(self, i: int, j: int) -> GaussPolyTerm:
        return self.entries[i][j]

    def evaluate(self, t: float, t_prime: float, hp: Hyperparams, i: int, j: int) -> float:
        """Scalar kernel value for channel pair (i, j)."""
        return hp.signal_variance * self.entries[i][j].evaluate(t - t_prime, hp.lam)

    def eval_blocks(self, ts, tps, hp: Hyperparams) -> np.ndarray:
        """All channel-pair blocks over two time grids.

        Returns an array of shape (size, size, len(ts), len(tps)) where
        [i, j] is K_ij evaluated on the grid outer product.
        """
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        tps = np.atleast_1d(np.asarray(tps, dtype=float))
        lam = hp.lam
        u = ts[:, None] - tps[None, :]
        envelope = np.exp(-0.5 * lam * u * u)
        nz = self.size
        out = np.empty((nz, nz, ts.size, tps.size))
        for i in range(nz):
            for j in range(nz):
                coeffs = self.entries[i][j].u_coefficients(lam)
                out[i, j] = hp.signal_variance * npoly.polyval(u, coeffs) * envelope
        return out

    def joint_matrix(self, ts, tps, hp: Hyperparams) -> np.ndarray:
        """Kernel matrix over (time, channel) pairs, point-major ordering:
        row p*size + i corresponds to (ts[p], channel i)."""
        blocks = self.eval_blocks(ts, tps, hp)
        nz, _, n_rows, n_cols = blocks.shape
        return blocks.transpose(2, 0, 3, 1).reshape(n_rows * nz, n_cols * nz)

    def describe(self) -> str:
        """Human-readable dump of all entries (1-based channel indices)."""
        lines = []
        for i in range(self.size):
            for j in range(self.size):
                lines.append(f"K[{i + 1},{j + 1}] = {self.entries[i][j]}")
        return "\n".join(lines)


def build_operator_kernel(v_cols: PolyMatrix) -> OperatorKernel:
    """Push the latent SE process through the operator columns.

    ``v_cols`` holds the nullspace columns of the system operator; entry
    (i, j) of the result is sum over columns c of
    v[i,c](d/dt) v[j,c](d/dt') k_se(t, t').
    """
    if v_cols.cols == 0:
        raise ValueError("operator matrix has no columns: empty nullspace")
    base = se_kernel()
    nz = v_cols.rows
    entries = []
    for i in range(nz):
        row = []
        for j in range(nz):
            acc = GaussPolyTerm.zero()
            for c in range(v_cols.cols):
                acc = acc.plus(apply_operator_pair(v_cols[i, c], v_cols[j, c], base))
            row.append(acc)
        entries.append(tuple(row))
    return OperatorKernel(tuple(entries))
