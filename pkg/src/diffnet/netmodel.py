"""Physical network description and its backward-difference discrete-time model."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import polymat
from .polymat import PolyMatrix


class StructureError(ValueError):
    """A polynomial matrix lacks the diagonal / Laplacian / symmetric structure required."""


@dataclass(frozen=True)
class ContinuousNetwork:
    """Diffusively coupled network in continuous time.

    ``x[j, l]`` is the ground/buffer component of node ``j`` multiplying the
    ``l``-th derivative, ``y[(j, k)]`` (with ``j < k``) the coupling component
    between nodes ``j`` and ``k``.  Nodes are 0-based here; file formats and
    reports use 1-based node numbers.
    """

    x: np.ndarray
    y: dict
    B: PolyMatrix

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        L = x.shape[0]
        ys = {}
        widths = set()
        for (j, k), coeffs in self.y.items():
            j, k = int(j), int(k)
            if j == k or not (0 <= j < L and 0 <= k < L):
                raise ValueError(f"invalid coupling pair ({j}, {k}) for L={L}")
            key = (min(j, k), max(j, k))
            if key in ys:
                raise ValueError(f"coupling {key} given twice")
            arr = np.atleast_1d(np.asarray(coeffs, dtype=float))
            widths.add(arr.size)
            ys[key] = arr
        if len(widths) > 1:
            raise ValueError("all couplings must share the same order")
        if self.B.rows != L:
            raise ValueError(f"B has {self.B.rows} rows, expected {L}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", dict(sorted(ys.items())))

    @property
    def L(self) -> int:
        return self.x.shape[0]

    @property
    def K(self) -> int:
        return self.B.cols

    @property
    def n_x(self) -> int:
        return self.x.shape[1] - 1

    @property
    def n_y(self) -> int:
        if not self.y:
            return 0
        return next(iter(self.y.values())).size - 1

    def X(self) -> PolyMatrix:
        """Diagonal polynomial matrix of ground components (in the derivative operator)."""
        c = np.zeros((self.n_x + 1, self.L, self.L))
        idx = np.arange(self.L)
        c[:, idx, idx] = self.x.T
        return PolyMatrix(c)

    def Y(self) -> PolyMatrix:
        """Laplacian polynomial matrix of coupling components."""
        c = np.zeros((self.n_y + 1, self.L, self.L))
        for (j, k), coeffs in self.y.items():
            c[:, j, k] -= coeffs
            c[:, k, j] -= coeffs
            c[:, j, j] += coeffs
            c[:, k, k] += coeffs
        return PolyMatrix(c)

    def edges(self, tol: float = 0.0) -> set:
        return {pair for pair, c in self.y.items() if np.max(np.abs(c)) > tol}

    def is_connected(self) -> bool:
        adj = {j: set() for j in range(self.L)}
        for j, k in self.edges():
            adj[j].add(k)
            adj[k].add(j)
        seen, stack = {0}, [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.L

    def violations(self) -> list[str]:
        problems = []
        if np.any(self.x < 0):
            problems.append("negative ground component")
        if any(np.any(c < 0) for c in self.y.values()):
            problems.append("negative coupling component")
        if not self.is_connected():
            problems.append("coupling graph is not connected")
        if not np.any(self.x > 0):
            problems.append("no node is connected to ground")
        return problems

    def validate(self) -> "ContinuousNetwork":
        problems = self.violations()
        if problems:
            raise StructureError("; ".join(problems))
        return self

    @classmethod
    def from_matrices(cls, X: PolyMatrix, Y: PolyMatrix, B: PolyMatrix) -> "ContinuousNetwork":
        """Build from a diagonal ``X`` and a symmetric zero-row-sum ``Y`` (no sign checks)."""
        L = X.rows
        x = np.array([X.coeffs[:, j, j] for j in range(L)])
        y = {(j, k): -Y.coeffs[:, j, k] for j in range(L) for k in range(j + 1, L)}
        return cls(x, y, B)


@dataclass(frozen=True)
class DiscreteModel:
    """``A(q^-1) w(t) = B(q^-1) r(t) + C(q^-1) e(t)`` with ``cov(e) = Lambda``."""

    A: PolyMatrix
    B: PolyMatrix
    C: PolyMatrix
    Lambda: np.ndarray = field(repr=False)
    Ts: float = 1.0

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.Lambda, dtype=float))
        object.__setattr__(self, "Lambda", lam)
        L = self.A.rows
        if self.A.cols != L or self.B.rows != L or self.C.shape != (L, L) or lam.shape != (L, L):
            raise ValueError("inconsistent model dimensions")

    @property
    def L(self) -> int:
        return self.A.rows

    @property
    def K(self) -> int:
        return self.B.cols

    def violations(self, tol: float = 1e-9) -> list[str]:
        problems = []
        if not polymat.structure(self.A, tol).symmetric:
            problems.append("A is not symmetric")
        if not verify_rank_A0(self.A):
            problems.append("A_0 is singular")
        elif not polymat.is_inverse_stable(self.A):
            problems.append("A^-1 is unstable")
        if not np.allclose(self.C.coeffs[0], np.eye(self.L), atol=tol):
            problems.append("C is not monic")
        elif not polymat.is_inverse_stable(self.C):
            # a monic FIR C is always stable; only its inverse can fail
            problems.append("C^-1 is unstable")
        if not np.allclose(self.Lambda, self.Lambda.T, atol=tol) or np.any(
            np.linalg.eigvalsh((self.Lambda + self.Lambda.T) / 2) <= 0
        ):
            problems.append("Lambda is not symmetric positive definite")
        return problems


def _to_discrete(c: np.ndarray, Ts: float) -> np.ndarray:
    n = c.shape[0] - 1
    out = np.zeros_like(c, dtype=float)
    for lag in range(n + 1):
        for i in range(lag, n + 1):
            out[lag] += comb(i, lag) * Ts ** (-i) * c[i]
        out[lag] *= (-1) ** lag
    return out


def _to_continuous(c: np.ndarray, Ts: float) -> np.ndarray:
    n = c.shape[0] - 1
    out = np.zeros_like(c, dtype=float)
    for lag in range(n + 1):
        for i in range(lag, n + 1):
            out[lag] += comb(i, lag) * c[i]
        out[lag] *= (-Ts) ** lag
    return out


def discretize(net: ContinuousNetwork, Ts: float) -> tuple[PolyMatrix, PolyMatrix, PolyMatrix]:
    """Backward-difference map ``d/dt -> (1 - q^-1) / Ts`` applied to ``X``, ``Y`` and ``B``.

    ``Xbar`` and ``Ybar`` share the degree ``max(n_x, n_y)``.
    """
    if Ts <= 0:
        raise ValueError("sampling interval must be positive")
    d = max(net.n_x, net.n_y)
    Xbar = PolyMatrix(_to_discrete(net.X().padded(d).coeffs, Ts))
    Ybar = PolyMatrix(_to_discrete(net.Y().padded(d).coeffs, Ts))
    B = PolyMatrix(_to_discrete(net.B.coeffs, Ts))
    return Xbar, Ybar, B


def undiscretize(Xbar: PolyMatrix, Ybar: PolyMatrix, B: PolyMatrix, Ts: float,
                 tol: float = 1e-9) -> ContinuousNetwork:
    if Ts <= 0:
        raise ValueError("sampling interval must be positive")
    _check_components(Xbar, Ybar, tol)
    d = max(Xbar.degree, Ybar.degree)
    X = PolyMatrix(_to_continuous(Xbar.padded(d).coeffs, Ts))
    Y = PolyMatrix(_to_continuous(Ybar.padded(d).coeffs, Ts))
    Bc = PolyMatrix(_to_continuous(B.coeffs, Ts))
    return ContinuousNetwork.from_matrices(X, Y, Bc)


def _check_components(Xbar: PolyMatrix, Ybar: PolyMatrix, tol: float):
    if Xbar.shape != Ybar.shape:
        raise ValueError(f"shape mismatch {Xbar.shape} vs {Ybar.shape}")
    fx = polymat.structure(Xbar, tol)
    if not fx.diagonal:
        raise StructureError("Xbar must be diagonal")
    # scale-aware tolerance: Ybar coefficients can be O(1e4) after discretization
    scale = max(1.0, float(np.max(np.abs(Ybar.coeffs))))
    fy = polymat.structure(Ybar, tol * scale)
    if not (fy.symmetric and fy.zero_row_sum):
        raise StructureError("Ybar must be symmetric with zero row sums")


def assemble_A(Xbar: PolyMatrix, Ybar: PolyMatrix) -> PolyMatrix:
    if Xbar.shape != Ybar.shape:
        raise ValueError(f"shape mismatch {Xbar.shape} vs {Ybar.shape}")
    return Xbar + Ybar


def split_A(A: PolyMatrix, tol: float = 0.0) -> tuple[PolyMatrix, PolyMatrix]:
    """Unique diagonal + zero-row-sum decomposition of a symmetric ``A``.

    The off-diagonal part of ``A`` is copied into ``Ybar`` and the row sums
    go to ``Xbar``; the diagonals are chosen so that ``Xbar + Ybar``
    reproduces ``A`` bit for bit (row sums of ``Ybar`` vanish to rounding).
    """
    c = A.coeffs
    if A.rows != A.cols or np.any(np.abs(c - c.transpose(0, 2, 1)) > tol):
        raise StructureError("A must be symmetric")
    L = A.rows
    idx = np.arange(L)
    ybar = c.copy()
    ybar[:, idx, idx] = 0.0
    off_sum = ybar.sum(axis=1)  # column sums = row sums by symmetry: sum_{i != j} a_ij
    ybar[:, idx, idx] = -off_sum
    xbar = np.zeros_like(c)
    xbar[:, idx, idx], ybar[:, idx, idx] = _complement(c[:, idx, idx], ybar[:, idx, idx])
    return PolyMatrix(xbar), PolyMatrix(ybar)


def _complement(a: np.ndarray, y: np.ndarray, max_steps: int = 8):
    """``(x, y')`` with ``x`` close to ``a - y`` and the floating-point sum ``x + y'`` equal to ``a``.

    The plain difference can miss by a rounding step, so ``x`` walks a few
    ulps towards the target.  When ``x + y`` lands on a rounding tie no
    ``x`` works and ``y`` itself moves by one ulp.  Entries that still
    miss (extreme cancellation) keep the plain difference.
    """
    def walk(y):
        x = a - y
        for _ in range(max_steps):
            s = x + y
            off = s != a
            if not off.any():
                break
            x = np.where(off, np.nextafter(x, np.where(s < a, np.inf, -np.inf)), x)
        return x

    x = walk(y)
    for direction in (np.inf, -np.inf):
        off = x + y != a
        if not off.any():
            break
        y2 = np.where(off, np.nextafter(y, direction), y)
        x2 = walk(y2)
        fixed = off & (x2 + y2 == a)
        x, y = np.where(fixed, x2, x), np.where(fixed, y2, y)
    off = x + y != a
    return np.where(off, a - y, x), y


@dataclass(frozen=True)
class RankReport:
    full_rank: bool
    singular_values: np.ndarray
    det: float

    def __bool__(self):
        return self.full_rank


def verify_rank_A0(model, tol: float = 1e-12) -> RankReport:
    """Numerical rank check of ``A_0``; accepts a model, a polynomial or a plain matrix."""
    if isinstance(model, DiscreteModel):
        A0 = model.A.coeffs[0]
    elif isinstance(model, PolyMatrix):
        A0 = model.coeffs[0]
    else:
        A0 = np.asarray(model, dtype=float)
    s = np.linalg.svd(A0, compute_uv=False)
    full = bool(s.size and s[-1] > tol * s[0])
    return RankReport(full, s, float(np.linalg.det(A0)))


@dataclass(frozen=True)
class ModuleRepresentation:
    """``w = G w + R r`` with ``G_jk = G_num[j, k] / den[j]`` and ``R_jm = R_num[j, m] / den[j]``.

    Numerator and denominator arrays hold polynomial coefficients in ``q^-1``
    along the last axis.
    """

    G_num: np.ndarray
    R_num: np.ndarray
    den: np.ndarray

    def G(self, j: int, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.G_num[j, k], self.den[j]

    def R(self, j: int, m: int) -> tuple[np.ndarray, np.ndarray]:
        return self.R_num[j, m], self.den[j]


def to_module_representation(A: PolyMatrix, B: PolyMatrix) -> ModuleRepresentation:
    L = A.rows
    d = max(A.degree, B.degree)
    a = A.padded(d).coeffs
    b = B.padded(d).coeffs
    den = np.array([a[:, j, j] for j in range(L)])
    if np.any(np.all(den == 0, axis=1)):
        raise ValueError("a diagonal polynomial of A is identically zero")
    G_num = -a.transpose(1, 2, 0).copy()
    G_num[np.arange(L), np.arange(L)] = 0.0
    R_num = b.transpose(1, 2, 0).copy()
    return ModuleRepresentation(G_num, R_num, den)


def random_network(rng: np.random.Generator, L: int, n_x: int, n_y: int, K: int = 1,
                   extra_edge_prob: float = 0.3) -> ContinuousNetwork:
    """Random connected, grounded network with positive components (spanning tree plus extras)."""
    order = rng.permutation(L)
    pairs = set()
    for pos in range(1, L):
        a, b = order[pos], order[rng.integers(pos)]
        pairs.add((min(a, b), max(a, b)))
    for j in range(L):
        for k in range(j + 1, L):
            if rng.random() < extra_edge_prob:
                pairs.add((j, k))
    y = {}
    for pair in pairs:
        c = rng.uniform(0.0, 1.0, n_y + 1) * (rng.random(n_y + 1) < 0.7)
        c[rng.integers(n_y + 1)] = rng.uniform(0.1, 1.0)
        y[pair] = c
    x = rng.uniform(0.0, 1.0, (L, n_x + 1)) * (rng.random((L, n_x + 1)) < 0.5)
    x[rng.integers(L), rng.integers(n_x + 1)] = rng.uniform(0.1, 1.0)
    B = PolyMatrix(np.eye(L, K)[None])
    return ContinuousNetwork(x, y, B)
