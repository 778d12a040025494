"""Classical (static) operator inference: finite-difference targets and
minimal-norm least squares, including the sparse-sampling-period variant."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .datamodel import SparseMask, Trajectory, TrajectoryDataset
from .errors import DegenerateDataError
from .polymodel import feature_columns, monomial_count

PINV_CUTOFF = 1e-12


@dataclass(frozen=True)
class RegressionSystem:
    """Stacked regression D @ O = Rtarget with the column layout
    [phi_1 | ... | phi_L | controls] and O = [A_1^T; ...; A_L^T; B^T]."""

    D: np.ndarray
    Rtarget: np.ndarray
    state_dim: int
    degree: int
    control_dim: int

    def __post_init__(self):
        if self.D.shape[0] != self.Rtarget.shape[0]:
            raise ValueError("D and Rtarget must have equal row counts")
        expected = self.nbar
        if self.D.shape[1] != expected:
            raise ValueError(f"D has {self.D.shape[1]} columns, layout needs {expected}")
        if self.Rtarget.shape[1] != self.state_dim:
            raise ValueError("Rtarget column count must equal the state dimension")

    @property
    def nbar(self) -> int:
        return self.control_dim + sum(
            monomial_count(self.state_dim, l) for l in range(1, self.degree + 1))


def _retained(traj: Trajectory, mask: SparseMask | None) -> np.ndarray:
    if mask is None:
        return np.arange(traj.num_steps + 1)
    idx = np.array(mask.retained_indices, dtype=np.intp)
    if idx[-1] > traj.num_steps:
        raise ValueError(
            f"mask retains index {idx[-1]} but trajectory has only "
            f"{traj.num_steps + 1} states")
    return idx


def approx_derivatives(traj: Trajectory, mask: SparseMask | None = None) -> np.ndarray:
    """Forward-difference time derivatives at every retained index with a successor.

    Returns an (n, m) matrix, one column per retained index except the last:
    (q_next - q_cur) / (gap * dt). With a mask the gap is the sampling period,
    matching the scarce-data finite difference.
    """
    idx = _retained(traj, mask)
    if idx.shape[0] < 2:
        raise DegenerateDataError("need at least 2 retained states to differentiate")
    Q = traj.states[:, idx]
    gap = (idx[1] - idx[0]) * traj.grid.dt
    return np.diff(Q, axis=1) / gap


def assemble_system(dataset: TrajectoryDataset, degree: int,
                    mask: SparseMask | None = None,
                    derivatives: list[np.ndarray] | None = None) -> RegressionSystem:
    """Stack regression rows over all entries, ordered by (entry, time index).

    By default one row is produced per retained index with a successor, with
    the forward-difference derivative as target. Passing ``derivatives`` (one
    (n, len(retained)) matrix per entry, e.g. analytic right-hand sides)
    bypasses finite differencing and produces a row at every retained index
    (controls permitting).
    """
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    n = dataset.state_dim
    p = dataset.control_dim
    d_blocks = []
    r_blocks = []
    for i, entry in enumerate(dataset):
        traj = entry.trajectory
        idx = _retained(traj, mask)
        if derivatives is not None:
            derivs = np.asarray(derivatives[i], dtype=float)
            if derivs.shape != (n, idx.shape[0]):
                raise ValueError(
                    f"entry {i}: derivatives must have shape ({n}, {idx.shape[0]}), "
                    f"got {derivs.shape}")
            rows = idx
            if p > 0:
                # No control column exists at the final time index.
                keep = idx < traj.num_steps
                rows = idx[keep]
                derivs = derivs[:, keep]
        else:
            derivs = approx_derivatives(traj, mask)
            rows = idx[:-1]
        Q = traj.states[:, rows]
        blocks = [feature_columns(Q, l).T for l in range(1, degree + 1)]
        if p > 0:
            blocks.append(traj.controls[:, rows].T)
        d_blocks.append(np.hstack(blocks))
        r_blocks.append(derivs.T)
    return RegressionSystem(D=np.vstack(d_blocks), Rtarget=np.vstack(r_blocks),
                            state_dim=n, degree=degree, control_dim=p)


def solve_min_norm(system: RegressionSystem) -> tuple[tuple[np.ndarray, ...], np.ndarray | None]:
    """Minimum-Frobenius-norm least-squares solution, unpacked into (A_1..A_L), B.

    Uses the SVD pseudoinverse with singular values below 1e-12 * sigma_max
    truncated, so underdetermined systems get the minimal-norm minimizer.
    """
    D, R = system.D, system.Rtarget
    if D.shape[0] == 0:
        raise DegenerateDataError("regression system has no rows")
    U, s, Vt = np.linalg.svd(D, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        warnings.warn("data matrix has rank 0; returning zero operators")
        O = np.zeros((system.nbar, system.state_dim))
    else:
        keep = s > PINV_CUTOFF * s[0]
        if not keep.any():
            warnings.warn("data matrix has rank 0; returning zero operators")
            O = np.zeros((system.nbar, system.state_dim))
        else:
            O = Vt[keep].T @ ((U[:, keep].T @ R) / s[keep, None])
    return unpack_operators(O, system.state_dim, system.degree, system.control_dim)


def unpack_operators(O: np.ndarray, n: int, degree: int,
                     control_dim: int) -> tuple[tuple[np.ndarray, ...], np.ndarray | None]:
    """Split the stacked coefficient matrix into per-degree operators and B."""
    operators = []
    row = 0
    for l in range(1, degree + 1):
        nl = monomial_count(n, l)
        operators.append(O[row:row + nl].T.copy())
        row += nl
    B = O[row:row + control_dim].T.copy() if control_dim > 0 else None
    return tuple(operators), B


def pack_operators(operators: tuple[np.ndarray, ...],
                   B: np.ndarray | None) -> np.ndarray:
    """Inverse of :func:`unpack_operators`."""
    blocks = [A.T for A in operators]
    if B is not None:
        blocks.append(B.T)
    return np.vstack(blocks)


def objective_value(system: RegressionSystem, operators: tuple[np.ndarray, ...],
                    B: np.ndarray | None = None) -> float:
    """Unnormalized residual ||D O - Rtarget||_F^2 for the given operators.

    The 1/K normalization of the defining least-squares problem is dropped
    throughout this module; it does not change the minimizer.
    """
    O = pack_operators(tuple(operators), B)
    res = system.D @ O - system.Rtarget
    return float(np.sum(res * res))
