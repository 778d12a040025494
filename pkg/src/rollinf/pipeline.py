"""End-to-end benchmark runs on the coarse shallow-water problem.

One benchmark run generates truth trajectories for training / validation /
test inputs, builds a POD basis from the clean training snapshots, projects,
optionally pollutes the reduced training data with noise and/or observes it
only every xi-th step, fits both a static and a roll-out model per training
input, and evaluates the time-averaged relative test error of each method
next to the projection floor. The sweep subcommand and the acceptance suite
both drive this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import metrics
from .basis import ReducedBasis, pod_basis, project_dataset
from .benchgen import SweConfig, generate_swe_dataset
from .datamodel import SparseMask, TrajectoryDataset, add_noise
from .errors import IntegratorError
from .polymodel import PolyModel, Scheme, simulate
from .rolloutopinf import (InitStrategy, RollConfig, TrainConfig, TrainReport,
                           train)
from .staticopinf import assemble_system, solve_min_norm

# Paper-style input layouts at desk scale: corners of a sub-box for training,
# interior points for validation and test.
DEFAULT_TRAIN_PARAMS = ((0.225, 1.15), (0.225, 1.65), (0.475, 1.15), (0.475, 1.65))
DEFAULT_VALID_PARAMS = ((0.2875, 1.4), (0.4125, 1.4))
DEFAULT_TEST_PARAMS = ((0.2875, 1.275), (0.4125, 1.525))
# Pool used by the trajectory-count sweep (a 3x3 grid completed last).
TRAIN_PARAM_POOL = (
    (0.225, 1.15), (0.225, 1.65), (0.475, 1.15), (0.475, 1.65),
    (0.225, 1.4), (0.35, 1.4), (0.475, 1.4), (0.35, 1.65), (0.35, 1.15),
)


@dataclass(frozen=True)
class BenchmarkConfig:
    """Everything a single benchmark run depends on."""

    grid_points_per_dim: int = 24
    dt: float = 0.00075
    t_final: float = 0.15
    train_params: tuple[tuple[float, float], ...] = DEFAULT_TRAIN_PARAMS
    valid_params: tuple[tuple[float, float], ...] = DEFAULT_VALID_PARAMS
    test_params: tuple[tuple[float, float], ...] = DEFAULT_TEST_PARAMS
    reduced_dim: int = 10
    degree: int = 2
    scheme: Scheme = Scheme.IMEX_LINEAR_IMPLICIT
    noise_rho: float = 0.0
    sparse_period: int = 1
    roll_length: int = 50
    misfit_increments: tuple[int, ...] | None = None
    learning_rates: tuple[float, ...] = (1e-3, 1e-2, 1e-1)
    max_iters: int = 300
    init: InitStrategy = InitStrategy.STATIC_OPINF
    grad_clip: float | None = None
    seed: int = 0

    def roll_config(self) -> RollConfig:
        return RollConfig(roll_length=self.roll_length,
                          misfit_increments=self.misfit_increments,
                          sparse_period=self.sparse_period)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rates=tuple(sorted(self.learning_rates)),
                           max_iters=self.max_iters, init=self.init,
                           grad_clip=self.grad_clip, seed=self.seed)


@dataclass(frozen=True)
class BenchmarkResult:
    rollout_error: float
    static_error: float
    projection_error: float
    rollout_models: tuple[PolyModel, ...]
    static_models: tuple[PolyModel, ...]
    rollout_report: TrainReport
    rollout_test_divergences: tuple[bool, ...]
    static_test_divergences: tuple[bool, ...]
    train_params: np.ndarray


@lru_cache(maxsize=8)
def _swe_data(grid: int, dt: float, t_final: float,
              params: tuple[tuple[float, float], ...]) -> TrajectoryDataset:
    configs = [SweConfig(mu1=p[0], mu2=p[1], dt=dt, t_final=t_final,
                         grid_points_per_dim=grid) for p in params]
    return generate_swe_dataset(configs)


@lru_cache(maxsize=8)
def _swe_basis(grid: int, dt: float, t_final: float,
               params: tuple[tuple[float, float], ...], n: int) -> ReducedBasis:
    data = _swe_data(grid, dt, t_final, params)
    snapshots = np.hstack([e.trajectory.states for e in data])
    return pod_basis(snapshots, n)


def _static_models(reduced_train: TrajectoryDataset, cfg: BenchmarkConfig) -> tuple[PolyModel, ...]:
    models = []
    for entry in reduced_train:
        single = TrajectoryDataset((entry,))
        mask = None
        if cfg.sparse_period > 1:
            mask = SparseMask.for_grid(cfg.sparse_period, entry.trajectory.num_steps)
        ops, B = solve_min_norm(assemble_system(single, cfg.degree, mask=mask))
        models.append(PolyModel(ops, B, cfg.dt, cfg.scheme))
    return tuple(models)


def _test_predictors(train_params: np.ndarray, models: tuple[PolyModel, ...],
                     test: TrajectoryDataset) -> list[PolyModel]:
    return [metrics.model_at_param(train_params, models, e.param, strict=False)
            for e in test]


def _divergence_flags(predictors: list[PolyModel], test: TrajectoryDataset,
                      basis: ReducedBasis) -> tuple[bool, ...]:
    flags = []
    for model, entry in zip(predictors, test):
        traj = entry.trajectory
        try:
            result = simulate(model, basis.V.T @ traj.states[:, 0],
                              controls=traj.controls, num_steps=traj.num_steps)
            flags.append(result.diverged)
        except IntegratorError:
            flags.append(True)
    return tuple(flags)


def run_benchmark(cfg: BenchmarkConfig) -> BenchmarkResult:
    """Run the full static-vs-roll-out comparison for one configuration."""
    train_full = _swe_data(cfg.grid_points_per_dim, cfg.dt, cfg.t_final,
                           cfg.train_params)
    valid_full = _swe_data(cfg.grid_points_per_dim, cfg.dt, cfg.t_final,
                           cfg.valid_params)
    test_full = _swe_data(cfg.grid_points_per_dim, cfg.dt, cfg.t_final,
                          cfg.test_params)
    basis = _swe_basis(cfg.grid_points_per_dim, cfg.dt, cfg.t_final,
                       cfg.train_params, cfg.reduced_dim)

    reduced_train = project_dataset(basis, train_full)
    if cfg.noise_rho > 0:
        reduced_train = add_noise(reduced_train, cfg.noise_rho, cfg.seed)

    static_models = _static_models(reduced_train, cfg)
    report = train(reduced_train, valid_full, basis, cfg.roll_config(),
                   cfg.train_config(), cfg.scheme, cfg.degree)

    train_params = reduced_train.params()
    rollout_pred = _test_predictors(train_params, report.models, test_full)
    static_pred = _test_predictors(train_params, static_models, test_full)
    return BenchmarkResult(
        rollout_error=metrics.time_averaged_relative_error(test_full, rollout_pred, basis),
        static_error=metrics.time_averaged_relative_error(test_full, static_pred, basis),
        projection_error=metrics.projection_error(test_full, basis),
        rollout_models=report.models,
        static_models=static_models,
        rollout_report=report,
        rollout_test_divergences=_divergence_flags(rollout_pred, test_full, basis),
        static_test_divergences=_divergence_flags(static_pred, test_full, basis),
        train_params=train_params,
    )


SWEEP_AXES = ("roll-length", "noise", "sampling-period", "trajectory-count")


def sweep_point(base: BenchmarkConfig, axis: str, value: float) -> BenchmarkConfig:
    """Benchmark configuration for one point of a sweep axis."""
    if axis == "roll-length":
        return replace(base, roll_length=int(value))
    if axis == "noise":
        return replace(base, noise_rho=float(value))
    if axis == "sampling-period":
        return replace(base, sparse_period=int(value))
    if axis == "trajectory-count":
        count = int(value)
        if not 1 <= count <= len(TRAIN_PARAM_POOL):
            raise ValueError(
                f"trajectory-count must lie in [1, {len(TRAIN_PARAM_POOL)}]")
        return replace(base, train_params=TRAIN_PARAM_POOL[:count])
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
