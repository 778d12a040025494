"""Synthetic truth data: random stable quadratic systems and a coarse periodic
2-D shallow-water solver (height + velocity potential) integrated with RK4."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import DatasetEntry, TimeGrid, Trajectory, TrajectoryDataset
from .errors import DivergenceError
from .polymodel import PolyModel, Scheme, monomial_count

MU1_BOX = (0.2, 0.5)
MU2_BOX = (1.1, 1.7)


@dataclass(frozen=True)
class SweConfig:
    """One shallow-water run: initial-condition inputs, grid, and time horizon.

    The initial free-surface height is 1 + mu1 * exp(-mu2 * |x|^2) (the +1
    mean is kept in the state) and the velocity potential starts at zero, on
    the periodic square (-w, w)^2.
    """

    mu1: float
    mu2: float
    dt: float
    t_final: float
    grid_points_per_dim: int = 24
    domain_half_width: float = 4.0

    def __post_init__(self):
        if self.grid_points_per_dim < 8:
            raise ValueError("grid must have at least 8 points per dimension")
        if self.dt <= 0 or self.t_final <= 0:
            raise ValueError("dt and t_final must be positive")
        if not (MU1_BOX[0] <= self.mu1 <= MU1_BOX[1]
                and MU2_BOX[0] <= self.mu2 <= MU2_BOX[1]):
            raise ValueError(
                f"inputs ({self.mu1}, {self.mu2}) outside the admissible box "
                f"{MU1_BOX} x {MU2_BOX}")

    @property
    def num_steps(self) -> int:
        steps = int(round(self.t_final / self.dt))
        if abs(steps * self.dt - self.t_final) > 1e-9 * self.t_final:
            raise ValueError("t_final must be an integer multiple of dt")
        return steps


def random_quadratic_system(n: int, seed: int, spectral_margin: float = 0.1,
                            dt: float = 0.01,
                            scheme: Scheme = Scheme.FORWARD_EULER) -> PolyModel:
    """Random Hurwitz-linear quadratic truth model.

    A_1 = Q diag(lambda) Q^T with eigenvalues uniform in [-1, -margin] and a
    random orthogonal Q; the quadratic operator is scaled to one tenth of
    ||A_1||_F. No control term.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 < spectral_margin < 1:
        raise ValueError("spectral_margin must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    eigs = rng.uniform(-1.0, -spectral_margin, size=n)
    Q, Rfac = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(Rfac))  # deterministic orientation
    A1 = (Q * eigs) @ Q.T
    A1 = 0.5 * (A1 + A1.T)
    A2 = rng.standard_normal((n, monomial_count(n, 2)))
    A2 *= 0.1 * np.linalg.norm(A1) / np.linalg.norm(A2)
    return PolyModel(operators=(A1, A2), B=None, dt=dt, scheme=scheme)


# ---------------------------------------------------------------------------
# Shallow-water generator
# ---------------------------------------------------------------------------

def _ddx(F: np.ndarray, h: float) -> np.ndarray:
    """Centered periodic difference along axis 0 (the x direction)."""
    return (np.roll(F, -1, axis=0) - np.roll(F, 1, axis=0)) / (2.0 * h)


def _ddy(F: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(F, -1, axis=1) - np.roll(F, 1, axis=1)) / (2.0 * h)


def swe_rhs(state: np.ndarray, domain_half_width: float = 4.0) -> np.ndarray:
    """Semi-discrete shallow-water right-hand side on the stacked state [q_h; q_phi].

    d/dt q_h   = -div(q_h grad q_phi)
    d/dt q_phi = -1/2 |grad q_phi|^2 - q_h
    with second-order centered periodic differences on a g x g grid
    (state length 2 g^2, fields flattened row-major).
    """
    state = np.asarray(state, dtype=float).reshape(-1)
    if not np.isfinite(state).all():
        raise DivergenceError("shallow-water state is non-finite")
    g = int(round(np.sqrt(state.size / 2)))
    if 2 * g * g != state.size:
        raise ValueError(f"state length {state.size} is not 2*g^2 for any grid size g")
    h = 2.0 * domain_half_width / g
    qh = state[:g * g].reshape(g, g)
    qphi = state[g * g:].reshape(g, g)
    gx = _ddx(qphi, h)
    gy = _ddy(qphi, h)
    dqh = -(_ddx(qh * gx, h) + _ddy(qh * gy, h))
    dqphi = -0.5 * (gx * gx + gy * gy) - qh
    return np.concatenate([dqh.ravel(), dqphi.ravel()])


def swe_initial_state(cfg: SweConfig) -> np.ndarray:
    g = cfg.grid_points_per_dim
    w = cfg.domain_half_width
    coords = -w + (2.0 * w / g) * np.arange(g)
    X, Y = np.meshgrid(coords, coords, indexing="ij")
    qh = 1.0 + cfg.mu1 * np.exp(-cfg.mu2 * (X * X + Y * Y))
    return np.concatenate([qh.ravel(), np.zeros(g * g)])


def _rk4_step(state: np.ndarray, dt: float, half_width: float) -> np.ndarray:
    k1 = swe_rhs(state, half_width)
    k2 = swe_rhs(state + 0.5 * dt * k1, half_width)
    k3 = swe_rhs(state + 0.5 * dt * k2, half_width)
    k4 = swe_rhs(state + dt * k3, half_width)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def generate_swe_dataset(configs: list[SweConfig]) -> TrajectoryDataset:
    """One full-state trajectory per config (shared grid, dt, and horizon)."""
    if not configs:
        raise ValueError("need at least one configuration")
    ref = configs[0]
    for cfg in configs[1:]:
        if (cfg.grid_points_per_dim, cfg.domain_half_width, cfg.dt, cfg.t_final) != \
                (ref.grid_points_per_dim, ref.domain_half_width, ref.dt, ref.t_final):
            raise ValueError("all configurations must share grid, dt, and horizon")
    entries = []
    for idx, cfg in enumerate(configs):
        K = cfg.num_steps
        state = swe_initial_state(cfg)
        states = np.empty((state.size, K + 1))
        states[:, 0] = state
        for k in range(1, K + 1):
            try:
                state = _rk4_step(state, cfg.dt, cfg.domain_half_width)
            except DivergenceError as exc:
                raise DivergenceError(
                    f"shallow-water run {idx} (mu=({cfg.mu1}, {cfg.mu2})) "
                    f"diverged at step {k}", step_index=k) from exc
            if not np.isfinite(state).all():
                raise DivergenceError(
                    f"shallow-water run {idx} (mu=({cfg.mu1}, {cfg.mu2})) "
                    f"diverged at step {k}", step_index=k)
            states[:, k] = state
        grid = TimeGrid(t0=0.0, dt=cfg.dt, num_steps=K)
        entries.append(DatasetEntry(np.array([cfg.mu1, cfg.mu2]),
                                    Trajectory(states, grid)))
    return TrajectoryDataset(tuple(entries))
