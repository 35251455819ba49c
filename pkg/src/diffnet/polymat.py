"""Matrix polynomials in the backward shift operator.

A :class:`PolyMatrix` stores the coefficient stack ``P_0 ... P_n`` of
``P(q^-1) = sum_l P_l q^-l`` as a dense ``(n + 1, rows, cols)`` array.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.signal


@dataclass(frozen=True)
class PolyMatrix:
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim == 2:
            c = c[None]
        if c.ndim != 3:
            raise ValueError(f"coefficients must be (lags, rows, cols), got shape {c.shape}")
        if c.shape[0] == 0:
            raise ValueError("a polynomial needs at least one coefficient matrix")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def rows(self) -> int:
        return self.coeffs.shape[1]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def __getitem__(self, lag: int) -> np.ndarray:
        if lag < 0 or lag > self.degree:
            return np.zeros(self.shape)
        return self.coeffs[lag]

    def __repr__(self):
        return f"PolyMatrix(rows={self.rows}, cols={self.cols}, degree={self.degree})"

    @classmethod
    def identity(cls, size: int) -> "PolyMatrix":
        return cls(np.eye(size)[None])

    @classmethod
    def zeros(cls, rows: int, cols: int, degree: int = 0) -> "PolyMatrix":
        return cls(np.zeros((degree + 1, rows, cols)))

    @classmethod
    def scalar(cls, coeffs) -> "PolyMatrix":
        return cls(np.asarray(coeffs, dtype=float).reshape(-1, 1, 1))

    def padded(self, degree: int) -> "PolyMatrix":
        """Same polynomial with coefficient storage extended to ``degree``."""
        if degree < self.degree:
            raise ValueError("cannot pad to a lower degree")
        out = np.zeros((degree + 1,) + self.shape)
        out[: self.degree + 1] = self.coeffs
        return PolyMatrix(out)

    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        d = max(self.degree, other.degree)
        return PolyMatrix(self.padded(d).coeffs + other.padded(d).coeffs)

    def __sub__(self, other: "PolyMatrix") -> "PolyMatrix":
        return self + (-1.0) * other

    def __rmul__(self, alpha: float) -> "PolyMatrix":
        return PolyMatrix(alpha * self.coeffs)

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        return mul(self, other)

    def transpose(self) -> "PolyMatrix":
        return PolyMatrix(self.coeffs.transpose(0, 2, 1))

    def left_multiply(self, M: np.ndarray) -> "PolyMatrix":
        """Constant matrix times polynomial, ``M P(q^-1)``."""
        return PolyMatrix(np.einsum("ij,ljk->lik", M, self.coeffs))

    def right_multiply(self, M: np.ndarray) -> "PolyMatrix":
        return PolyMatrix(np.einsum("lij,jk->lik", self.coeffs, M))


@dataclass(frozen=True)
class StructureFlags:
    symmetric: bool
    diagonal: bool
    zero_row_sum: bool
    sign_laplacian: bool


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    roots: np.ndarray
    max_modulus: float

    def __bool__(self):
        return self.stable


def eval(P: PolyMatrix, z: complex) -> np.ndarray:  # noqa: A001
    """Evaluate ``sum_l P_l z^-l``."""
    z = complex(z)
    if P.degree == 0:
        return P.coeffs[0].astype(complex)
    powers = z ** (-np.arange(P.degree + 1, dtype=float))
    return np.tensordot(powers, P.coeffs, axes=1)


def mul(P: PolyMatrix, Q: PolyMatrix) -> PolyMatrix:
    if P.cols != Q.rows:
        raise ValueError(f"cannot multiply {P.shape} by {Q.shape}")
    out = np.zeros((P.degree + Q.degree + 1, P.rows, Q.cols))
    for i in range(P.degree + 1):
        for j in range(Q.degree + 1):
            out[i + j] += P.coeffs[i] @ Q.coeffs[j]
    return PolyMatrix(out)


def filter(P: PolyMatrix, s: np.ndarray, t: int) -> np.ndarray:  # noqa: A001
    """Return ``sum_l P_l s(t - l)`` for a signal matrix with time along columns."""
    s = np.asarray(s, dtype=float)
    if s.ndim == 1:
        s = s[None]
    if s.shape[0] != P.cols:
        raise ValueError(f"signal has {s.shape[0]} channels, polynomial expects {P.cols}")
    if t < P.degree or t >= s.shape[1]:
        raise IndexError(f"t={t} outside [{P.degree}, {s.shape[1] - 1}]")
    out = np.zeros(P.rows)
    for lag in range(P.degree + 1):
        out += P.coeffs[lag] @ s[:, t - lag]
    return out


def apply(P: PolyMatrix, s: np.ndarray) -> np.ndarray:
    """Filter a whole signal, assuming ``s(t) = 0`` for ``t < 0``."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    if s.shape[0] != P.cols:
        raise ValueError(f"signal has {s.shape[0]} channels, polynomial expects {P.cols}")
    N = s.shape[1]
    out = np.zeros((P.rows, N))
    for lag in range(min(P.degree, N - 1) + 1):
        out[:, lag:] += P.coeffs[lag] @ s[:, : N - lag]
    return out


def solve_recursive(P: PolyMatrix, v: np.ndarray) -> np.ndarray:
    """Solve ``P(q^-1) x(t) = v(t)`` forward in time with zero initial conditions.

    ``P_0`` must be invertible; the recursion is
    ``x(t) = P_0^-1 [v(t) - sum_{l>=1} P_l x(t-l)]``.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if v.shape[0] != P.rows or P.rows != P.cols:
        raise ValueError("recursive solve needs a square polynomial matching the signal")
    P0inv = np.linalg.inv(P.coeffs[0])
    u = P0inv @ v
    n = P.degree
    L, N = v.shape
    if n == 0:
        return u
    # x(t) = u(t) - G @ [x(t-1); ...; x(t-n)]
    G = np.hstack([P0inv @ P.coeffs[lag] for lag in range(1, n + 1)])
    if N > 64:
        x = _solve_modal(G, u, L, n)
        if x is not None:
            return x
    x = np.zeros((N, L))
    hist = np.zeros(n * L)
    uT = np.ascontiguousarray(u.T)
    for t in range(N):
        xt = uT[t] - G @ hist
        x[t] = xt
        hist[L:] = hist[:-L]
        hist[:L] = xt
    return x.T


def _solve_modal(G, u, L, n, max_cond=1e6):
    """Same recursion in the eigenbasis of its companion matrix, one first-order filter per mode.

    Returns ``None`` when the eigenvectors are too ill-conditioned to trust.
    """
    F = np.zeros((n * L, n * L))
    F[:L] = -G
    F[L:, :-L] = np.eye((n - 1) * L)
    lam, V = np.linalg.eig(F)
    if not np.all(np.isfinite(lam)) or np.linalg.cond(V) > max_cond:
        return None
    y = np.linalg.solve(V, np.vstack([u, np.zeros(((n - 1) * L, u.shape[1]))]).astype(complex))
    z = np.empty_like(y)
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(n * L):
            z[m] = scipy.signal.lfilter([1.0], [1.0, -lam[m]], y[m])
        x = (V[:L] @ z).real
    return x


def toeplitz(x, i: int, j: int) -> np.ndarray:
    """Lower-triangular banded Toeplitz matrix of size ``i x j`` with first column ``x[:i]``."""
    if i < j:
        raise ValueError(f"need rows >= cols, got {i} x {j}")
    col = np.zeros(i)
    x = np.asarray(x, dtype=float).ravel()[:i]
    col[: x.size] = x
    out = np.zeros((i, j))
    for k in range(j):
        out[k:, k] = col[: i - k]
    return out


def structure(P: PolyMatrix, tol: float = 1e-9) -> StructureFlags:
    if P.rows != P.cols:
        raise ValueError("structure flags need a square polynomial")
    c = P.coeffs
    symmetric = bool(np.all(np.abs(c - c.transpose(0, 2, 1)) <= tol))
    off = c.copy()
    idx = np.arange(P.rows)
    off[:, idx, idx] = 0.0
    diagonal = bool(np.all(np.abs(off) <= tol))
    zero_row_sum = bool(np.all(np.abs(c.sum(axis=2)) <= tol))
    sign_laplacian = symmetric and zero_row_sum and bool(np.all(off <= tol))
    return StructureFlags(symmetric, diagonal, zero_row_sum, sign_laplacian)


def is_inverse_stable(A: PolyMatrix, tol: float = 1e-9) -> StabilityReport:
    """Check that every root of ``det(sum_l A_l z^(n-l))`` lies inside the unit circle."""
    if A.rows != A.cols:
        raise ValueError("stability check needs a square polynomial")
    A0 = A.coeffs[0]
    if np.linalg.matrix_rank(A0) < A.rows:
        raise np.linalg.LinAlgError("leading coefficient A_0 is singular")
    n, L = A.degree, A.rows
    if n == 0:
        return StabilityReport(True, np.zeros(0, dtype=complex), 0.0)
    comp = np.zeros((n * L, n * L))
    comp[:L] = -np.linalg.solve(A0, np.hstack(list(A.coeffs[1:])))
    comp[L:, :-L] = np.eye((n - 1) * L)
    roots = np.linalg.eigvals(comp)
    max_mod = float(np.max(np.abs(roots)))
    return StabilityReport(bool(max_mod < 1.0 + tol), roots, max_mod)
