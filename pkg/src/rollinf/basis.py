"""POD reduced basis: construction from snapshots, projection, lifting, persistence."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .datamodel import (DatasetEntry, Trajectory, TrajectoryDataset, load_matrix,
                        save_matrix, _frozen)
from .errors import RankDeficiencyError

ORTHONORMALITY_TOL = 1e-10
RANK_CUTOFF = 1e-12


@dataclass(frozen=True)
class ReducedBasis:
    """Orthonormal column basis V (N x n) with the snapshot singular values."""

    V: np.ndarray
    singular_values: np.ndarray

    def __post_init__(self):
        V = _frozen(self.V)
        s = _frozen(np.atleast_1d(self.singular_values)).reshape(-1)
        if V.ndim != 2:
            raise ValueError("V must be a matrix")
        n = V.shape[1]
        if s.shape[0] < n:
            raise ValueError("need at least reduced_dim singular values")
        if np.any(s < 0) or np.any(np.diff(s) > 0):
            raise ValueError("singular values must be nonnegative and descending")
        gram_defect = np.linalg.norm(V.T @ V - np.eye(n))
        if gram_defect > ORTHONORMALITY_TOL:
            raise ValueError(f"basis columns not orthonormal (defect {gram_defect:.3e})")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "singular_values", s)

    @property
    def full_dim(self) -> int:
        return self.V.shape[0]

    @property
    def reduced_dim(self) -> int:
        return self.V.shape[1]


def pod_basis(snapshots: np.ndarray, n: int) -> ReducedBasis:
    """Dominant n left singular vectors of the snapshot matrix.

    Columns are sign-fixed so each one's largest-magnitude entry is positive
    (ties broken by lowest row index), making the basis deterministic across
    runs. All min(N, S) singular values are retained in the result.
    """
    X = np.asarray(snapshots, dtype=float)
    if X.ndim != 2:
        raise ValueError("snapshots must be a matrix")
    if not np.isfinite(X).all():
        raise ValueError("snapshots contain non-finite entries")
    max_rank = min(X.shape)
    if not 1 <= n <= max_rank:
        raise ValueError(f"need 1 <= n <= min(N, S) = {max_rank}, got {n}")
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    if s[0] == 0.0 or s[n - 1] < RANK_CUTOFF * s[0]:
        achievable = int(np.count_nonzero(s >= RANK_CUTOFF * s[0])) if s[0] > 0 else 0
        raise RankDeficiencyError(
            f"snapshots support only rank {achievable}, requested {n}",
            achievable_rank=achievable)
    V = U[:, :n].copy()
    for j in range(n):
        i = int(np.argmax(np.abs(V[:, j])))
        if V[i, j] < 0:
            V[:, j] = -V[:, j]
    return ReducedBasis(V, s)


def project(basis: ReducedBasis, traj: Trajectory) -> Trajectory:
    """Reduced-space trajectory V^T Q; grid and controls are untouched."""
    if traj.state_dim != basis.full_dim:
        raise ValueError(
            f"trajectory dim {traj.state_dim} != basis full_dim {basis.full_dim}")
    return Trajectory(basis.V.T @ traj.states, traj.grid, traj.controls)


def lift(basis: ReducedBasis, reduced: Trajectory) -> Trajectory:
    """Full-space trajectory V Q_hat."""
    if reduced.state_dim != basis.reduced_dim:
        raise ValueError(
            f"trajectory dim {reduced.state_dim} != basis reduced_dim {basis.reduced_dim}")
    return Trajectory(basis.V @ reduced.states, reduced.grid, reduced.controls)


def project_dataset(basis: ReducedBasis, dataset: TrajectoryDataset) -> TrajectoryDataset:
    return TrajectoryDataset(tuple(
        DatasetEntry(e.param, project(basis, e.trajectory)) for e in dataset))


def lift_dataset(basis: ReducedBasis, dataset: TrajectoryDataset) -> TrajectoryDataset:
    return TrajectoryDataset(tuple(
        DatasetEntry(e.param, lift(basis, e.trajectory)) for e in dataset))


def save_basis(basis: ReducedBasis, directory: str | os.PathLike) -> None:
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    save_matrix(os.path.join(directory, "basis.rom1"), basis.V)
    save_matrix(os.path.join(directory, "singular_values.csv"),
                basis.singular_values.reshape(-1, 1))


def load_basis(directory: str | os.PathLike) -> ReducedBasis:
    directory = os.fspath(directory)
    V = load_matrix(os.path.join(directory, "basis.rom1"))
    s = load_matrix(os.path.join(directory, "singular_values.csv")).reshape(-1)
    return ReducedBasis(V, s)
