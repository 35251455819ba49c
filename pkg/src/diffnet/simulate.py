"""Data generation, prediction errors and identification costs for a :class:`DiscreteModel`."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import polymat
from .netmodel import DiscreteModel


class UnstableModelError(ValueError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class Dataset:
    """Node signals ``w`` (L x N) and excitations ``r`` (K x N) sampled every ``Ts`` seconds."""

    w: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    Ts: float = 1.0

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        r = np.asarray(self.r, dtype=float)
        if r.ndim == 1:
            r = r[None]
        if r.size == 0:
            r = np.zeros((0, w.shape[1]))
        if w.shape[1] == 0:
            raise ValueError("dataset needs at least one sample")
        if r.shape[1] != w.shape[1]:
            raise ValueError(f"w has {w.shape[1]} samples but r has {r.shape[1]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(r))):
            raise ValueError("signals contain NaN or Inf")
        w.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "r", r)

    @property
    def L(self) -> int:
        return self.w.shape[0]

    @property
    def K(self) -> int:
        return self.r.shape[0]

    @property
    def N(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class NoiseSpec:
    Lambda: np.ndarray
    seed: object = 0

    def draw(self, N: int) -> np.ndarray:
        lam = np.atleast_2d(np.asarray(self.Lambda, dtype=float))
        rng = np.random.default_rng(self.seed)
        if not np.any(lam):
            return np.zeros((lam.shape[0], N))
        chol = np.linalg.cholesky(lam)
        return chol @ rng.standard_normal((lam.shape[0], N))


def generate(model: DiscreteModel, r: np.ndarray, noise: NoiseSpec | None = None,
             return_noise: bool = False):
    """Simulate ``A w = B r + C e`` forward from rest.

    ``noise=None`` (or an all-zero covariance) gives noiseless data.  With
    ``return_noise`` the drawn ``e`` is returned alongside the dataset.
    """
    r = np.atleast_2d(np.asarray(r, dtype=float))
    if r.shape[0] != model.K:
        raise ValueError(f"r has {r.shape[0]} channels, model expects {model.K}")
    N = r.shape[1]
    if np.linalg.matrix_rank(model.A.coeffs[0]) < model.L:
        raise np.linalg.LinAlgError("A_0 is singular")
    report = polymat.is_inverse_stable(model.A)
    if not report:
        raise UnstableModelError(f"A^-1 is unstable (max root modulus {report.max_modulus:.6g})", report)
    e = np.zeros((model.L, N)) if noise is None else noise.draw(N)
    rhs = polymat.apply(model.B, r) + polymat.apply(model.C, e)
    w = polymat.solve_recursive(model.A, rhs)
    data = Dataset(w, r, model.Ts)
    return (data, e) if return_noise else data


def innovation_covariance(A0: np.ndarray, Lambda: np.ndarray) -> np.ndarray:
    A0inv = np.linalg.inv(A0)
    return A0inv @ Lambda @ A0inv.T


def prediction_error(model: DiscreteModel, data: Dataset) -> np.ndarray:
    """``A_0^-1 C^-1 [A w - B r]`` from rest, i.e. ``Cbar^-1 [A w - B r]`` with ``Cbar = C A_0``."""
    if data.L != model.L or data.K != model.K:
        raise ValueError("dataset dimensions do not match the model")
    if not np.allclose(model.C.coeffs[0], np.eye(model.L)):
        raise ValueError("noise model C must be monic")
    Cbar = model.C.right_multiply(model.A.coeffs[0])
    return structured_residual(model.A, model.B, Cbar, data)


def structured_residual(A, B, Cbar, data: Dataset) -> np.ndarray:
    v = polymat.apply(A, data.w) - polymat.apply(B, data.r)
    return polymat.solve_recursive(Cbar, v)


def one_step_predictor(model: DiscreteModel, data: Dataset, horizon: int | None = None) -> np.ndarray:
    """``[I - A_0^-1 C^-1 A] w + A_0^-1 C^-1 B r`` via a truncated impulse response of ``C^-1``.

    Independent of :func:`prediction_error`: the inverse noise filter is
    expanded as a power series (``horizon`` terms, default the record length)
    and applied by direct convolution.
    """
    L, N = model.L, data.N
    horizon = N if horizon is None else horizon
    Cinv = np.zeros((horizon, L, L))
    Cinv[0] = np.eye(L)
    for k in range(1, horizon):
        acc = np.zeros((L, L))
        for m in range(1, min(k, model.C.degree) + 1):
            acc -= model.C.coeffs[m] @ Cinv[k - m]
        Cinv[k] = acc
    A0inv = np.linalg.inv(model.A.coeffs[0])
    Ww = polymat.mul(polymat.PolyMatrix(Cinv), model.A).left_multiply(A0inv)
    Wr = polymat.mul(polymat.PolyMatrix(Cinv), model.B).left_multiply(A0inv)
    pred = np.zeros((L, N))
    for t in range(N):
        acc = data.w[:, t].copy()
        for lag in range(min(t, Ww.degree) + 1):
            acc -= Ww.coeffs[lag] @ data.w[:, t - lag]
        for lag in range(min(t, Wr.degree) + 1):
            acc += Wr.coeffs[lag] @ data.r[:, t - lag]
        pred[:, t] = acc
    return pred


def cost_weighted(eps: np.ndarray, S: np.ndarray) -> float:
    eps = np.atleast_2d(eps)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if not np.allclose(S, S.T) or np.any(np.linalg.eigvalsh(S) <= 0):
        raise ValueError("weight must be symmetric positive definite")
    return float(np.einsum("it,ij,jt->", eps, S, eps) / eps.shape[1])


@dataclass(frozen=True)
class DetCost:
    value: float
    degenerate: bool

    def __float__(self):
        return self.value


def cost_det(eps: np.ndarray, rtol: float = 1e-12) -> DetCost:
    """Determinant of the sample covariance; degenerate (value 0) when it is rank deficient."""
    eps = np.atleast_2d(eps)
    L, N = eps.shape
    if N <= L:
        raise ValueError(f"need more samples than channels, got N={N}, L={L}")
    cov = eps @ eps.T / N
    s = np.linalg.svd(cov, compute_uv=False)
    if s[0] == 0 or s[-1] <= rtol * s[0]:
        return DetCost(0.0, True)
    return DetCost(float(np.linalg.det(cov)), False)


def autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalised sample autocorrelation of each row at lags ``1..max_lag``."""
    x = np.atleast_2d(x)
    x = x - x.mean(axis=1, keepdims=True)
    N = x.shape[1]
    denom = np.sum(x * x, axis=1)
    out = np.empty((x.shape[0], max_lag))
    for lag in range(1, max_lag + 1):
        out[:, lag - 1] = np.sum(x[:, lag:] * x[:, : N - lag], axis=1) / denom
    return out


def whiteness(eps: np.ndarray, max_lag: int = 20) -> float:
    """Largest ``|autocorrelation| * sqrt(N)``; under whiteness this is below about 3."""
    eps = np.atleast_2d(eps)
    return float(np.max(np.abs(autocorrelation(eps, max_lag))) * np.sqrt(eps.shape[1]))
