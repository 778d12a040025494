"""Lyapunov-certificate bound on the stability radius of quadratic models.

For a model dq/dt = A_1 q + A_2 phi_2(q), a certificate matrix P solving
    A_1^T P + P A_1 = -L L^T
yields the lower bound
    gamma = sigma_min(L) / (2 sqrt(||P||_F) ||A_2||_F)
on the radius of the domain of attraction. The bound is averaged over random
standard-normal realizations of L.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import NoCertificateError
from .polymodel import PolyModel

MAX_LYAPUNOV_CONDITION = 1e12
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class StabilityReport:
    """Per-realization bounds and their average (infinite values excluded)."""

    gammas: np.ndarray
    lyapunov_residuals: np.ndarray
    mean_gamma: float
    num_realizations: int
    num_infinite: int
    seed: int


def _lyapunov_factorization(A1: np.ndarray):
    """LU of the Kronecker operator for X -> A_1^T X + X A_1 (column-major vec)."""
    A1 = np.atleast_2d(np.asarray(A1, dtype=float))
    n = A1.shape[0]
    if A1.shape != (n, n):
        raise ValueError(f"A_1 must be square, got {A1.shape}")
    eye = np.eye(n)
    K = np.kron(eye, A1.T) + np.kron(A1.T, eye)
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond > MAX_LYAPUNOV_CONDITION:
        raise NoCertificateError(
            "Lyapunov operator is numerically singular "
            f"(cond={cond:.3e}); A_1 admits no certificate")
    return lu_factor(K), n


def lyapunov_solve(A1: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Solve A_1^T P + P A_1 = -L L^T; the result is symmetrized.

    Raises :class:`NoCertificateError` when the vectorized system is
    numerically singular (eigenvalue pair of A_1 summing to ~0) or the
    residual exceeds 1e-8 * ||L L^T||_F.
    """
    fact, n = _lyapunov_factorization(A1)
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.shape != (n, n):
        raise ValueError(f"L must have shape ({n}, {n}), got {L.shape}")
    A1 = np.atleast_2d(np.asarray(A1, dtype=float))
    Q = L @ L.T
    P = lu_solve(fact, -Q.flatten(order="F")).reshape(n, n, order="F")
    P = 0.5 * (P + P.T)
    residual = np.linalg.norm(A1.T @ P + P @ A1 + Q)
    if residual > RESIDUAL_TOL * max(np.linalg.norm(Q), np.finfo(float).tiny):
        raise NoCertificateError(
            f"Lyapunov residual {residual:.3e} exceeds tolerance")
    return P


def stability_radius_bound(A1: np.ndarray, A2: np.ndarray,
                           L: np.ndarray) -> float:
    """gamma = sigma_min(L) / (2 sqrt(||P||_F) ||A_2||_F); +inf when A_2 = 0.

    An infinite value flags a linear model for which the quadratic bound is
    vacuous.
    """
    A2 = np.atleast_2d(np.asarray(A2, dtype=float))
    norm_A2 = np.linalg.norm(A2)
    if norm_A2 == 0.0:
        return float("inf")
    P = lyapunov_solve(A1, L)
    sigma_min = np.linalg.svd(np.atleast_2d(np.asarray(L, dtype=float)),
                              compute_uv=False)[-1]
    return float(sigma_min / (2.0 * np.sqrt(np.linalg.norm(P)) * norm_A2))


def averaged_bound(model: PolyModel, num_realizations: int,
                   seed: int) -> StabilityReport:
    """Average the stability-radius bound over random certificate factors L.

    Each realization draws an (n, n) matrix with i.i.d. standard-normal
    entries from an independent child stream of ``seed`` (``SeedSequence(seed)
    .spawn``). The Kronecker operator of A_1 is factorized once and reused for
    every realization. Infinite bounds are excluded from the mean and counted
    separately.
    """
    if model.degree < 2:
        raise ValueError("stability bound needs a quadratic operator (degree >= 2)")
    if num_realizations < 1:
        raise ValueError("num_realizations must be >= 1")
    A1 = model.operators[0]
    A2 = model.operators[1]
    fact, n = _lyapunov_factorization(A1)
    norm_A2 = np.linalg.norm(A2)

    gammas = np.empty(num_realizations)
    residuals = np.empty(num_realizations)
    children = np.random.SeedSequence(seed).spawn(num_realizations)
    for i, child in enumerate(children):
        L = np.random.default_rng(child).standard_normal((n, n))
        Q = L @ L.T
        P = lu_solve(fact, -Q.flatten(order="F")).reshape(n, n, order="F")
        P = 0.5 * (P + P.T)
        residuals[i] = np.linalg.norm(A1.T @ P + P @ A1 + Q)
        if residuals[i] > RESIDUAL_TOL * np.linalg.norm(Q):
            gammas[i] = np.nan
            continue
        if norm_A2 == 0.0:
            gammas[i] = np.inf
            continue
        sigma_min = np.linalg.svd(L, compute_uv=False)[-1]
        gammas[i] = sigma_min / (2.0 * np.sqrt(np.linalg.norm(P)) * norm_A2)

    finite = np.isfinite(gammas)
    if not finite.any():
        raise NoCertificateError("no realization produced a finite certificate")
    return StabilityReport(
        gammas=gammas,
        lyapunov_residuals=residuals,
        mean_gamma=float(gammas[finite].mean()),
        num_realizations=num_realizations,
        num_infinite=int(np.isinf(gammas).sum()),
        seed=seed,
    )


def save_stability_report(report: StabilityReport, path: str | os.PathLike) -> None:
    """CSV rows (realization, gamma, residual) preceded by a summary comment line."""
    lines = [
        f"# mean_gamma={report.mean_gamma!r} realizations={report.num_realizations} "
        f"infinite={report.num_infinite} seed={report.seed}"
    ]
    for i, (g, r) in enumerate(zip(report.gammas, report.lyapunov_residuals)):
        lines.append(f"{i},{g!r},{r!r}")
    with open(os.fspath(path), "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
