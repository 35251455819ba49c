"""Structured reduction of the ARX estimate: null-space fitting with equality constraints.

The structured parameter vector is ``vartheta = [theta_a; theta_b; eta_c]``:

* ``theta_a`` holds the upper triangle of the symmetric ``A``: rows ``i``,
  columns ``j >= i``, lags ``0..n_a``;
* ``theta_b`` holds ``B``: rows ``i``, inputs ``j``, lags ``0..n_b``;
* ``eta_c`` holds ``Cbar = C A_0``: rows ``i``, columns ``j``, lags ``1..n_c``
  (``Cbar_0`` is tied to ``A_0``).

For an ARX estimate ``zeta`` the matrix ``Q(zeta)`` satisfies
``Q(zeta) vartheta = coeffs(Cbar Abreve - A, Cbar Bbreve - B)`` over lags
``1..n`` and ``0..n``, stacked in zeta order.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import polymat
from .arx import ArxEstimate
from .polymat import PolyMatrix
from .simulate import Dataset, cost_det, structured_residual

log = logging.getLogger(__name__)


class IdentifiabilityError(np.linalg.LinAlgError):
    """The constrained least-squares problem has no unique solution."""


@dataclass(frozen=True)
class ParamLayout:
    L: int
    K: int
    n_a: int
    n_b: int
    n_c: int

    def __post_init__(self):
        if self.L < 1 or min(self.K, self.n_a, self.n_b, self.n_c) < 0:
            raise ValueError("layout counts must be non-negative with L >= 1")

    @property
    def dim_a(self) -> int:
        return self.L * (self.L + 1) // 2 * (self.n_a + 1)

    @property
    def dim_b(self) -> int:
        return self.L * self.K * (self.n_b + 1)

    @property
    def dim_c(self) -> int:
        return self.L * self.L * self.n_c

    @property
    def dim(self) -> int:
        return self.dim_a + self.dim_b + self.dim_c

    def pair(self, i: int, j: int) -> int:
        """Position of the unordered pair ``{i, j}`` in row-major upper-triangle order."""
        i, j = min(i, j), max(i, j)
        return i * self.L - i * (i - 1) // 2 + (j - i)

    def a(self, i: int, j: int, lag: int) -> int:
        if not 0 <= lag <= self.n_a:
            raise IndexError(f"a lag {lag} outside 0..{self.n_a}")
        return self.pair(i, j) * (self.n_a + 1) + lag

    def b(self, i: int, j: int, lag: int) -> int:
        if not (0 <= lag <= self.n_b and 0 <= j < self.K):
            raise IndexError(f"b[{i}][{j}][{lag}] outside layout")
        return self.dim_a + (i * self.K + j) * (self.n_b + 1) + lag

    def c(self, i: int, j: int, lag: int) -> int:
        if not 1 <= lag <= self.n_c:
            raise IndexError(f"cbar lag {lag} outside 1..{self.n_c}")
        return self.dim_a + self.dim_b + (i * self.L + j) * self.n_c + lag - 1

    def names(self) -> list[str]:
        """1-based parameter names in stacking order."""
        out = []
        for i in range(self.L):
            for j in range(i, self.L):
                out += [f"a[{i + 1}][{j + 1}][{lag}]" for lag in range(self.n_a + 1)]
        for i in range(self.L):
            for j in range(self.K):
                out += [f"b[{i + 1}][{j + 1}][{lag}]" for lag in range(self.n_b + 1)]
        for i in range(self.L):
            for j in range(self.L):
                out += [f"cbar[{i + 1}][{j + 1}][{lag}]" for lag in range(1, self.n_c + 1)]
        return out

    def index(self, kind: str, i: int, j: int, lag: int) -> int:
        return {"a": self.a, "b": self.b, "cbar": self.c}[kind](i, j, lag)


def make_layout(L: int, K: int, n_a: int, n_b: int, n_c: int) -> ParamLayout:
    return ParamLayout(L, K, n_a, n_b, n_c)


@dataclass(frozen=True)
class Constraint:
    """Linear equality ``Gamma vartheta = gamma``."""

    Gamma: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.Gamma, dtype=float)
        g = np.asarray(self.gamma, dtype=float).ravel()
        if G.ndim == 1:
            G = G[None] if G.size else G.reshape(0, 0)
        if G.shape[0] != g.size:
            raise ValueError(f"Gamma has {G.shape[0]} rows but gamma has {g.size} entries")
        object.__setattr__(self, "Gamma", G)
        object.__setattr__(self, "gamma", g)

    @property
    def m(self) -> int:
        return self.gamma.size

    @property
    def fixes_scale(self) -> bool:
        return bool(np.any(self.gamma != 0))

    @property
    def full_row_rank(self) -> bool:
        return self.m == 0 or np.linalg.matrix_rank(self.Gamma) == self.m

    @classmethod
    def empty(cls, dim: int) -> "Constraint":
        return cls(np.zeros((0, dim)), np.zeros(0))


@dataclass(frozen=True)
class StructuredEstimate:
    vartheta: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)
    Lambda_bar: np.ndarray = field(repr=False)
    cost_trace: tuple = ()
    iterations: int = 0
    degenerate: bool = False
    diverged: bool = False
    warnings: tuple = ()


# ---------------------------------------------------------------- packing


def unpack(vartheta: np.ndarray, layout: ParamLayout) -> tuple[PolyMatrix, PolyMatrix, PolyMatrix]:
    """Return ``(A, B, Cbar)`` with ``A`` mirrored from its upper triangle and ``Cbar_0 = A_0``."""
    vartheta = np.asarray(vartheta, dtype=float)
    if vartheta.size != layout.dim:
        raise ValueError(f"vartheta has {vartheta.size} entries, layout needs {layout.dim}")
    L, K, na, nb, nc = layout.L, layout.K, layout.n_a, layout.n_b, layout.n_c
    a = np.zeros((na + 1, L, L))
    for i in range(L):
        for j in range(i, L):
            s = layout.a(i, j, 0)
            a[:, i, j] = a[:, j, i] = vartheta[s:s + na + 1]
    b = vartheta[layout.dim_a:layout.dim_a + layout.dim_b].reshape(L, K, nb + 1).transpose(2, 0, 1)
    c = np.zeros((nc + 1, L, L))
    c[0] = a[0]
    c[1:] = vartheta[layout.dim_a + layout.dim_b:].reshape(L, L, nc).transpose(2, 0, 1)
    return PolyMatrix(a), PolyMatrix(b), PolyMatrix(c)


def pack(A: PolyMatrix, B: PolyMatrix, Cbar: PolyMatrix, layout: ParamLayout) -> np.ndarray:
    """Inverse of :func:`unpack`; ``A`` is read from its upper triangle."""
    L, K = layout.L, layout.K
    if A.shape != (L, L) or B.shape != (L, K) or Cbar.shape != (L, L):
        raise ValueError("polynomial dimensions do not match the layout")
    if A.degree > layout.n_a or B.degree > layout.n_b or Cbar.degree > layout.n_c:
        raise ValueError("polynomial degree exceeds the layout")
    a = A.padded(layout.n_a).coeffs
    b = B.padded(layout.n_b).coeffs
    c = Cbar.padded(layout.n_c).coeffs
    theta_a = [a[:, i, j] for i in range(L) for j in range(i, L)]
    theta_b = b.transpose(1, 2, 0).ravel()
    eta_c = c[1:].transpose(1, 2, 0).ravel()
    return np.concatenate([np.concatenate(theta_a) if theta_a else [], theta_b, eta_c])


# ---------------------------------------------------------------- Q and T


def _zeta_blocks(zeta: np.ndarray, layout: ParamLayout, n: int):
    L, K = layout.L, layout.K
    expected = L * (L * n + K * (n + 1))
    if zeta.size != expected:
        raise ValueError(f"zeta has {zeta.size} entries, expected {expected} for n={n}")
    abr = np.zeros((L, L, n + 1))
    abr[:, :, 0] = np.eye(L)
    abr[:, :, 1:] = zeta[:L * L * n].reshape(L, L, n)
    bbr = zeta[L * L * n:].reshape(L, K, n + 1) if K else np.zeros((L, 0, n + 1))
    return abr, bbr


def build_Q(zeta, layout: ParamLayout, n: int | None = None) -> np.ndarray:
    """Assemble ``Q(zeta)``; accepts an :class:`ArxEstimate` or a raw zeta vector with ``n``."""
    if isinstance(zeta, ArxEstimate):
        n = zeta.n
        zeta = zeta.zeta
    if n is None:
        raise ValueError("ARX order n is required with a raw zeta vector")
    L, K, na, nb, nc = layout.L, layout.K, layout.n_a, layout.n_b, layout.n_c
    if n < max(na, nb, nc):
        raise ValueError(f"ARX order n={n} must be at least max(n_a, n_b, n_c)={max(na, nb, nc)}")
    abr, bbr = _zeta_blocks(np.asarray(zeta, dtype=float), layout, n)
    rows_a = L * L * n
    Q = np.zeros((rows_a + L * K * (n + 1), layout.dim))
    for i in range(L):
        qa = Q[i * L * n:(i + 1) * L * n].reshape(L, n, layout.dim)  # views: (j, lag-1, col)
        qb = Q[rows_a + i * K * (n + 1):rows_a + (i + 1) * K * (n + 1)].reshape(K, n + 1, layout.dim)
        for k in range(L):
            col = layout.a(i, k, 0)
            qa[:, :, col] += abr[k, :, 1:]
            qb[:, :, col] += bbr[k]
            for m in range(1, nc + 1):
                col = layout.c(i, k, m)
                qa[:, m - 1:, col] += abr[k, :, :n - m + 1]
                qb[:, m:, col] += bbr[k, :, :n + 1 - m]
        for j in range(L):
            for lag in range(1, na + 1):
                qa[j, lag - 1, layout.a(i, j, lag)] -= 1.0
        for j in range(K):
            for lag in range(nb + 1):
                qb[j, lag, layout.b(i, j, lag)] -= 1.0
    return Q


def _shift(size: int, m: int) -> np.ndarray:
    return np.eye(size, k=-m)


def build_T(vartheta: np.ndarray, layout: ParamLayout, n: int) -> np.ndarray:
    """``T(vartheta) = -blockdiag(T_L(n,n)(Cbar), T_K(n+1,n+1)(Cbar))``.

    Maps an ARX coefficient error ``zeta_hat - zeta_0`` to ``-Q(zeta_hat) vartheta``
    when ``vartheta`` is exact.
    """
    L, K = layout.L, layout.K
    _, _, Cbar = unpack(vartheta, layout)
    TA = np.zeros((L * L * n, L * L * n))
    TB = np.zeros((L * K * (n + 1), L * K * (n + 1)))
    for m in range(min(Cbar.degree, n) + 1):
        TA += np.kron(Cbar.coeffs[m], np.kron(np.eye(L), _shift(n, m)))
        if K:
            TB += np.kron(Cbar.coeffs[m], np.kron(np.eye(K), _shift(n + 1, m)))
    return -scipy.linalg.block_diag(TA, TB)


# ---------------------------------------------------------------- KKT


def solve_kkt(H: np.ndarray, Gamma: np.ndarray, gamma: np.ndarray,
              cond_limit: float = 1e14) -> tuple[np.ndarray, np.ndarray]:
    """Minimise ``x' H x`` subject to ``Gamma x = gamma`` via the bordered (KKT) system."""
    H = np.asarray(H, dtype=float)
    d = H.shape[0]
    Gamma = np.asarray(Gamma, dtype=float).reshape(-1, d)
    gamma = np.asarray(gamma, dtype=float).ravel()
    m = Gamma.shape[0]
    scale = np.linalg.norm(H, ord=np.inf) or 1.0
    K = np.zeros((d + m, d + m))
    K[:d, :d] = H / scale
    K[:d, d:] = Gamma.T
    K[d:, :d] = Gamma
    rhs = np.concatenate([np.zeros(d), gamma])
    try:
        with warnings.catch_warnings():
            # singularity is diagnosed below through the condition number
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(K, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise IdentifiabilityError(f"KKT system could not be factorised: {exc}") from exc
    if not np.all(np.isfinite(lu[0])) or np.linalg.cond(K) > cond_limit:
        raise IdentifiabilityError(
            "KKT system is singular: the constrained problem has no unique minimiser "
            "(check the identifiability conditions)"
        )
    sol = scipy.linalg.lu_solve(lu, rhs)
    return sol[:d], sol[d:] * scale


# ---------------------------------------------------------------- steps


def _residual_stats(vartheta, layout, data: Dataset, n: int):
    """Structured residual statistics; ``None`` when ``Cbar`` has no stable inverse."""
    A, B, Cbar = unpack(vartheta, layout)
    try:
        if not polymat.is_inverse_stable(Cbar):
            return None
    except np.linalg.LinAlgError:
        return None
    eps = structured_residual(A, B, Cbar, data)[:, n:]
    if not np.all(np.isfinite(eps)):
        return None
    Lambda_bar = eps @ eps.T / data.N
    return Lambda_bar, cost_det(eps)


def _is_degenerate(Lambda_bar: np.ndarray, data: Dataset, rtol: float = 1e-12) -> bool:
    power = float(np.mean(data.w ** 2)) or 1.0
    return float(np.min(np.linalg.eigvalsh(Lambda_bar))) <= rtol * power


def step2(arx: ArxEstimate, data: Dataset, layout: ParamLayout, constraint: Constraint,
          use_weighting: bool = True) -> StructuredEstimate:
    """Initial structured estimate from the (optionally ``P^-1``-weighted) null-space fit."""
    Q = build_Q(arx, layout)
    degenerate = _is_degenerate(arx.Lambda_bar, data)
    if use_weighting and not degenerate:
        H = Q.T @ arx.info() @ Q
    else:
        H = Q.T @ Q
    vartheta, lam = solve_kkt(H, constraint.Gamma, constraint.gamma)
    stats = _residual_stats(vartheta, layout, data, arx.n)
    notes = []
    if stats is None:
        notes.append("step 2 estimate of Cbar has no stable inverse")
        Lambda_bar, cost = arx.Lambda_bar, np.inf
    else:
        Lambda_bar, dc = stats
        cost = dc.value
        degenerate = degenerate or dc.degenerate
    return StructuredEstimate(vartheta, lam, Lambda_bar, (cost,), 0, degenerate, False, tuple(notes))


def step3(arx: ArxEstimate, prev: StructuredEstimate, data: Dataset, layout: ParamLayout,
          constraint: Constraint, max_iter: int = 50, tol: float = 1e-9,
          patience: int = 5) -> StructuredEstimate:
    """Iteratively reweighted null-space fit with ``W = T^-T P^-1 T^-1``.

    Returns the iterate (Step-2 estimate included) with the smallest
    determinant cost; ties go to the earliest iterate.
    """
    if prev.degenerate:
        return prev
    Q = build_Q(arx, layout)
    best = prev
    best_cost = prev.cost_trace[-1]
    trace = [best_cost]
    current = prev
    notes = list(prev.warnings)
    increases = 0
    diverged = False
    k = 0
    for k in range(1, max_iter + 1):
        T = build_T(current.vartheta, layout, arx.n)
        try:
            M = scipy.linalg.solve(T, Q)
            Pinv = arx.info(current.Lambda_bar)
            H = M.T @ Pinv @ M
            H = (H + H.T) / 2
            vartheta, lam = solve_kkt(H, constraint.Gamma, constraint.gamma)
        except (np.linalg.LinAlgError, ValueError) as exc:
            notes.append(f"iteration {k} failed: {exc}")
            break
        stats = _residual_stats(vartheta, layout, data, arx.n)
        if stats is None:
            notes.append(f"iteration {k}: Cbar has no stable inverse")
            trace.append(np.inf)
            break
        Lambda_bar, dc = stats
        cost = dc.value
        trace.append(cost)
        current = StructuredEstimate(vartheta, lam, Lambda_bar)
        if cost < best_cost:
            best, best_cost = current, cost
        prev_cost = trace[-2]
        increases = increases + 1 if cost > prev_cost else 0
        if increases >= patience:
            diverged = True
            notes.append(f"determinant cost increased {patience} consecutive iterations")
            break
        if np.isfinite(prev_cost) and abs(cost - prev_cost) <= tol * abs(prev_cost):
            break
    if best is prev and len(trace) > 1:
        notes.append("no iteration improved on the step 2 estimate")
        log.info("step 3 did not improve the determinant cost; keeping the step 2 estimate")
    return StructuredEstimate(best.vartheta, best.lam, best.Lambda_bar, tuple(trace), k,
                              False, diverged, tuple(notes))


def recover_noise(est: StructuredEstimate, layout: ParamLayout) -> tuple[PolyMatrix, np.ndarray]:
    """``C = Cbar A_0^-1`` and ``Lambda = A_0 Lambda_bar A_0``."""
    A, _, Cbar = unpack(est.vartheta, layout)
    A0 = A.coeffs[0]
    if np.linalg.matrix_rank(A0) < layout.L:
        raise np.linalg.LinAlgError("estimated A_0 is singular")
    C = Cbar.right_multiply(np.linalg.inv(A0))
    Lambda = A0 @ est.Lambda_bar @ A0
    return C, (Lambda + Lambda.T) / 2
