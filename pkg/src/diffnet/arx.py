"""High-order ARX fit of ``Abreve(q^-1) w(t) = Bbreve(q^-1) r(t) + ebar(t)``.

Parameter layout of ``zeta``: first ``abreve[i][j][l]`` for rows ``i``,
columns ``j`` and lags ``l = 1..n``; then ``bbreve[i][j][l]`` for rows
``i``, inputs ``j`` and lags ``l = 0..n``.  All loops run with the lag
fastest.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .polymat import PolyMatrix
from .simulate import Dataset


class InsufficientExcitationError(np.linalg.LinAlgError):
    pass


def zeta_dim(L: int, K: int, n: int) -> int:
    return L * (L * n + K * (n + 1))


def row_dim(L: int, K: int, n: int) -> int:
    """Length of the regressor shared by every MISO row."""
    return L * n + K * (n + 1)


def regressor_matrix(data: Dataset, n: int) -> np.ndarray:
    """Stack the per-row regressors for ``t = n .. N-1`` (0-based) into an ``(N - n, d)`` array."""
    L, K, N = data.L, data.K, data.N
    if N <= n:
        raise ValueError(f"need more than n={n} samples, got {N}")
    rows = N - n
    U = np.empty((rows, row_dim(L, K, n)))
    col = 0
    for j in range(L):
        for lag in range(1, n + 1):
            U[:, col] = -data.w[j, n - lag: N - lag]
            col += 1
    for j in range(K):
        for lag in range(0, n + 1):
            U[:, col] = data.r[j, n - lag: N - lag]
            col += 1
    return U


def build_regressor(data: Dataset, n: int, t: int) -> np.ndarray:
    """Regressor ``[-w_1(t-1..t-n), ..., -w_L(..), r_1(t..t-n), ..., r_K(..)]`` at 0-based time ``t``."""
    if t < n or t >= data.N:
        raise IndexError(f"t={t} outside [{n}, {data.N - 1}]")
    past_w = [-data.w[j, t - n: t][::-1] for j in range(data.L)]
    past_r = [data.r[j, t - n: t + 1][::-1] for j in range(data.K)]
    return np.concatenate(past_w + past_r)


def _row_major_perm(L: int, K: int, n: int) -> np.ndarray:
    """``perm[z]`` = position of zeta entry ``z`` in the row-major (row i, regressor c) ordering."""
    d = row_dim(L, K, n)
    na_block = L * n
    nb_block = K * (n + 1)
    perm = np.empty(zeta_dim(L, K, n), dtype=int)
    for i in range(L):
        perm[i * na_block:(i + 1) * na_block] = i * d + np.arange(na_block)
        start = L * na_block + i * nb_block
        perm[start:start + nb_block] = i * d + na_block + np.arange(nb_block)
    return perm


@dataclass(frozen=True)
class ArxEstimate:
    n: int
    L: int
    K: int
    zeta: np.ndarray = field(repr=False)
    Lambda_bar: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)  # (1/N) sum u(t) u(t)^T of the shared row regressor
    N: int = 0
    N_eff: int = 0

    def info(self, Lambda_bar: np.ndarray | None = None) -> np.ndarray:
        """``P^-1 = (1/N) sum phi Lambda^-1 phi^T`` in zeta layout for the given innovation covariance."""
        lam = self.Lambda_bar if Lambda_bar is None else Lambda_bar
        lam_inv = np.linalg.inv(lam)
        full = np.kron(lam_inv, self.gram)
        perm = _row_major_perm(self.L, self.K, self.n)
        return full[np.ix_(perm, perm)]

    @property
    def coefficient_matrix(self) -> np.ndarray:
        """Per-row parameters as a ``(d, L)`` array (column ``i`` predicts ``w_i``)."""
        perm = _row_major_perm(self.L, self.K, self.n)
        flat = np.empty_like(self.zeta)
        flat[perm] = self.zeta
        return flat.reshape(self.L, -1).T

    def A_breve(self) -> PolyMatrix:
        L, n = self.L, self.n
        a = self.zeta[: L * L * n].reshape(L, L, n)
        c = np.zeros((n + 1, L, L))
        c[0] = np.eye(L)
        c[1:] = a.transpose(2, 0, 1)
        return PolyMatrix(c)

    def B_breve(self) -> PolyMatrix:
        L, K, n = self.L, self.K, self.n
        b = self.zeta[L * L * n:].reshape(L, K, n + 1)
        return PolyMatrix(b.transpose(2, 0, 1))

    def residuals(self, data: Dataset) -> np.ndarray:
        U = regressor_matrix(data, self.n)
        return data.w[:, self.n:] - (U @ self.coefficient_matrix).T


def zeta_from_polys(Abreve: PolyMatrix, Bbreve: PolyMatrix, n: int) -> np.ndarray:
    """Pack expansion coefficients (lags above ``n`` dropped, missing lags zero) into zeta layout."""
    L, K = Bbreve.rows, Bbreve.cols
    a = np.zeros((n + 1, L, L))
    m = min(n, Abreve.degree)
    a[: m + 1] = Abreve.coeffs[: m + 1]
    b = np.zeros((n + 1, L, K))
    m = min(n, Bbreve.degree)
    b[: m + 1] = Bbreve.coeffs[: m + 1]
    return np.concatenate([a[1:].transpose(1, 2, 0).ravel(), b.transpose(1, 2, 0).ravel()])


def estimate(data: Dataset, n: int, rcond: float | None = None) -> ArxEstimate:
    """Least-squares ARX fit, one MISO problem per node, sharing one QR-based solve."""
    L, K, N = data.L, data.K, data.N
    d = row_dim(L, K, n)
    if N - n <= d:
        raise InsufficientExcitationError(
            f"{N - n} usable samples cannot determine {d} parameters per row"
        )
    U = regressor_matrix(data, n)
    target = data.w[:, n:].T
    coef, _, rank, sv = np.linalg.lstsq(U, target, rcond=rcond)
    if rank < d or sv[-1] <= max(U.shape) * np.finfo(float).eps * sv[0]:
        raise InsufficientExcitationError(
            f"regressor Gram matrix is singular (rank {rank} < {d}); data are not informative"
        )
    eps = target - U @ coef
    Lambda_bar = eps.T @ eps / N
    perm = _row_major_perm(L, K, n)
    zeta = coef.T.ravel()[perm]
    return ArxEstimate(n, L, K, zeta, Lambda_bar, U.T @ U / N, N, N - n)
