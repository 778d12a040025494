"""Roll-out operator inference: multi-step objectives, exact discrete-adjoint
gradients, Adam training, and learning-rate selection on validation data.

The objective rolls the model's discrete flow map R steps ahead from every
admissible window start and penalizes the squared misfit against the observed
states, optionally only at a subset of increments and optionally on data that
are observed only every xi-th base step. Gradients are computed by a reverse
sweep over each unrolled window (a discrete adjoint), so they match the
implemented objective to machine precision rather than approximating a
continuous adjoint.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .basis import ReducedBasis
from .datamodel import SparseMask, Trajectory, TrajectoryDataset
from .errors import DivergenceError, IntegratorError, TrainingFailedError
from .polymodel import (PolyModel, Scheme, divergence_threshold, feature_columns,
                        feature_vjp, monomial_count)
from .staticopinf import assemble_system, solve_min_norm


class InitStrategy(enum.Enum):
    ZEROS = "zeros"
    STATIC_OPINF = "static"


@dataclass(frozen=True)
class RollConfig:
    """Roll-out length R, optional misfit increments, optional sampling period.

    ``misfit_increments`` of None penalizes the misfit at every increment
    1..R. With a sampling period xi > 1, increments count observed states (the
    model still steps at the base dt, so data increment r means r*xi base
    steps); increments beyond floor(R/xi) are unusable and dropped.
    """

    roll_length: int
    misfit_increments: tuple[int, ...] | None = None
    sparse_period: int = 1

    def __post_init__(self):
        if self.roll_length < 1:
            raise ValueError(f"roll_length must be >= 1, got {self.roll_length}")
        if self.sparse_period < 1:
            raise ValueError(f"sparse_period must be >= 1, got {self.sparse_period}")
        if self.misfit_increments is not None:
            inc = tuple(sorted(set(int(r) for r in self.misfit_increments)))
            if not inc:
                raise ValueError("misfit_increments must not be empty")
            if inc[0] < 1 or inc[-1] > self.roll_length:
                raise ValueError("misfit increments must lie within [1, roll_length]")
            object.__setattr__(self, "misfit_increments", inc)

    def data_increments(self) -> tuple[int, ...]:
        """Increments on the observed-data grid (may be empty when R < xi)."""
        max_inc = self.roll_length // self.sparse_period
        if self.misfit_increments is None:
            return tuple(range(1, max_inc + 1))
        return tuple(r for r in self.misfit_increments if r <= max_inc)


@dataclass(frozen=True)
class TrainConfig:
    """Adam hyperparameters, the learning-rate grid, and the initialization rule."""

    learning_rates: tuple[float, ...] = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
    max_iters: int = 2000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init: InitStrategy = InitStrategy.ZEROS
    grad_clip: float | None = None
    seed: int = 0

    def __post_init__(self):
        rates = tuple(float(r) for r in self.learning_rates)
        if not rates or any(r <= 0 for r in rates):
            raise ValueError("learning rates must be positive")
        if list(rates) != sorted(rates):
            raise ValueError("learning rates must be sorted ascending")
        object.__setattr__(self, "learning_rates", rates)
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")
        if not isinstance(self.init, InitStrategy):
            object.__setattr__(self, "init", InitStrategy(self.init))


@dataclass(frozen=True)
class TrainReport:
    """Outcome of :func:`train`: per-entry models, histories, selection data.

    ``wall_seconds`` is informational only and is never serialized, so that
    seeded runs produce bit-identical artifacts.
    """

    selected_rate: float
    models: tuple[PolyModel, ...]
    validation_error: float
    validation_errors: dict[float, float]
    loss_histories: dict[float, tuple[np.ndarray, ...]]
    divergence: dict[float, tuple[int | None, ...]]
    train_params: np.ndarray
    seed: int
    wall_seconds: float


def log_spaced_increments(roll_length: int, count: int) -> tuple[int, ...]:
    """Roughly log-equidistant integers between 1 and R, deduplicated ascending."""
    if roll_length < 1 or count < 1:
        raise ValueError("need roll_length >= 1 and count >= 1")
    vals = np.exp(np.linspace(0.0, np.log(roll_length), count))
    ints = set(int(v) for v in np.rint(vals))
    ints.update((1, roll_length))
    return tuple(sorted(ints))


# ---------------------------------------------------------------------------
# Objective and gradient
# ---------------------------------------------------------------------------

def _window_layout(num_steps: int, cfg: RollConfig) -> tuple[np.ndarray, tuple[int, ...]]:
    """Window start indices and the base-step offsets at which misfits accrue."""
    R, xi = cfg.roll_length, cfg.sparse_period
    if R > num_steps:
        raise ValueError(f"roll_length {R} exceeds trajectory steps {num_steps}")
    if xi == 1:
        starts = np.arange(num_steps - R + 1)
        misfit = cfg.misfit_increments or tuple(range(1, R + 1))
    else:
        starts = xi * np.arange((num_steps - R) // xi + 1)
        misfit = tuple(r * xi for r in cfg.data_increments())
    return starts, misfit


def _entry_pass(model: PolyModel, traj: Trajectory, cfg: RollConfig,
                need_grad: bool):
    """Compute the windowed objective for one trajectory, optionally with the
    adjoint gradient. Returns (objective, grads_or_None, divergence_step_or_None);
    a divergent roll-out yields (+inf, None, step)."""
    Q = traj.states
    U = traj.controls
    starts, misfit_steps = _window_layout(traj.num_steps, cfg)
    zero_grads = None
    if need_grad:
        zero_grads = ([np.zeros_like(A) for A in model.operators],
                      None if model.B is None else np.zeros_like(model.B))
    if not misfit_steps:
        return 0.0, zero_grads, None
    total = max(misfit_steps)
    misfit_set = frozenset(misfit_steps)
    threshold = divergence_threshold(np.abs(Q).max())
    imex = model.scheme is Scheme.IMEX_LINEAR_IMPLICIT
    if imex:
        try:
            Minv = model._implicit_inverse
        except IntegratorError:
            # The flow map cannot even be applied; treat like instant blow-up.
            return float("inf"), None, 0
        MinvT = Minv.T
    A = model.operators
    degree = model.degree
    dt = model.dt
    if model.B is not None and U is None:
        raise ValueError("model has controls but the trajectory carries none")

    Z = Q[:, starts].copy()
    states = [Z]
    features: list[dict[int, np.ndarray]] = []  # degrees >= 2 only
    objective = 0.0
    for r in range(1, total + 1):
        phi = {l: feature_columns(Z, l) for l in range(2, degree + 1)}
        if imex:
            G = Z.copy()
        else:
            G = Z + dt * (A[0] @ Z)
        for l in range(2, degree + 1):
            G += dt * (A[l - 1] @ phi[l])
        if model.B is not None:
            G += dt * (model.B @ U[:, starts + (r - 1)])
        Z = Minv @ G if imex else G
        peak = np.abs(Z).max()
        if not peak <= threshold:  # also catches NaN
            return float("inf"), None, r
        if r in misfit_set:
            E = Z - Q[:, starts + r]
            objective += float(np.sum(E * E))
        if need_grad:
            states.append(Z)
            features.append(phi)
    if not need_grad:
        return objective, None, None

    grad_A = [np.zeros_like(a) for a in A]
    grad_B = None if model.B is None else np.zeros_like(model.B)
    lam = np.zeros_like(states[0])
    for r in range(total, 0, -1):
        Zr, Zprev, phi = states[r], states[r - 1], features[r - 1]
        if r in misfit_set:
            lam = lam + 2.0 * (Zr - Q[:, starts + r])
        if imex:
            w = MinvT @ lam
            grad_A[0] += dt * (w @ Zr.T)     # implicit term differentiates at the new state
            lam = w
        else:
            w = lam
            grad_A[0] += dt * (w @ Zprev.T)
            lam = w + dt * (A[0].T @ w)
        for l in range(2, degree + 1):
            grad_A[l - 1] += dt * (w @ phi[l].T)
            lam = lam + dt * feature_vjp(Zprev, A[l - 1].T @ w, l)
        if grad_B is not None:
            grad_B += dt * (w @ U[:, starts + (r - 1)].T)
    return objective, (grad_A, grad_B), None


def rollout_objective(model: PolyModel, dataset: TrajectoryDataset,
                      cfg: RollConfig) -> float:
    """Sum of the roll-out objectives over all dataset entries.

    A divergent roll-out contributes +inf (reported, not raised) so that
    hyperparameter searches can discard exploding candidates gracefully.
    """
    _check_dims(model, dataset)
    total = 0.0
    for entry in dataset:
        j, _, _ = _entry_pass(model, entry.trajectory, cfg, need_grad=False)
        total += j
    return total


def rollout_gradient(model: PolyModel, dataset: TrajectoryDataset,
                     cfg: RollConfig) -> tuple[float, tuple[list[np.ndarray], np.ndarray | None]]:
    """Objective and its exact gradient with respect to (A_1..A_L, B).

    Raises :class:`DivergenceError` (carrying objective=+inf) when any window
    diverges, since no finite gradient exists there.
    """
    _check_dims(model, dataset)
    total = 0.0
    acc_A = [np.zeros_like(a) for a in model.operators]
    acc_B = None if model.B is None else np.zeros_like(model.B)
    for i, entry in enumerate(dataset):
        j, grads, div_step = _entry_pass(model, entry.trajectory, cfg, need_grad=True)
        if grads is None:
            raise DivergenceError(
                f"roll-out diverged on entry {i} at step {div_step}",
                step_index=div_step, objective=float("inf"))
        total += j
        gA, gB = grads
        for a, g in zip(acc_A, gA):
            a += g
        if acc_B is not None:
            acc_B += gB
    return total, (acc_A, acc_B)


def _check_dims(model: PolyModel, dataset: TrajectoryDataset) -> None:
    if dataset.state_dim != model.state_dim:
        raise ValueError(
            f"dataset state_dim {dataset.state_dim} != model dim {model.state_dim}")
    if dataset.control_dim != model.control_dim:
        raise ValueError(
            f"dataset control_dim {dataset.control_dim} != model {model.control_dim}")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class AdamOptimizer:
    """Standard bias-corrected Adam over a list of parameter arrays (in place)."""

    def __init__(self, params: list[np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: float | None = None):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.grad_clip = grad_clip
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def update(self, params: list[np.ndarray], grads: list[np.ndarray],
               lr: float) -> None:
        if self.grad_clip is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > self.grad_clip:
                grads = [g * (self.grad_clip / norm) for g in grads]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _zero_params(n: int, degree: int, control_dim: int) -> list[np.ndarray]:
    params = [np.zeros((n, monomial_count(n, l))) for l in range(1, degree + 1)]
    if control_dim > 0:
        params.append(np.zeros((n, control_dim)))
    return params


def _static_params(entry_ds: TrajectoryDataset, degree: int,
                   sparse_period: int) -> list[np.ndarray]:
    mask = None
    if sparse_period > 1:
        mask = SparseMask.for_grid(sparse_period,
                                   entry_ds.entries[0].trajectory.num_steps)
    ops, B = solve_min_norm(assemble_system(entry_ds, degree, mask=mask))
    params = [np.array(a) for a in ops]
    if B is not None:
        params.append(np.array(B))
    return params


def _params_to_model(params: list[np.ndarray], degree: int, control_dim: int,
                     dt: float, scheme: Scheme) -> PolyModel:
    B = params[degree] if control_dim > 0 else None
    return PolyModel(operators=tuple(params[:degree]), B=B, dt=dt, scheme=scheme)


def _feature_scales(entry_ds: TrajectoryDataset, degree: int,
                    control_dim: int) -> list[np.ndarray]:
    """RMS magnitude of every regressor column over the training states.

    Used as a diagonal reparametrization of the operators during Adam: a step
    of size lr on the scaled parameter moves A_l entries by lr / (feature
    magnitude), so wildly different coordinate scales neither explode the
    roll-outs nor freeze the small coordinates. This preconditions the
    optimizer only; objective and gradients are in the original variables.
    """
    Q = np.hstack([e.trajectory.states for e in entry_ds])
    scales = []
    for l in range(1, degree + 1):
        phi = feature_columns(Q, l)
        scales.append(np.sqrt(np.mean(phi * phi, axis=1)))
    if control_dim > 0:
        U = np.hstack([e.trajectory.controls for e in entry_ds])
        scales.append(np.sqrt(np.mean(U * U, axis=1)))
    out = []
    for s in scales:
        top = s.max()
        if top == 0.0:
            out.append(np.ones_like(s))
        else:
            # Columns far below their block's scale are barely identifiable;
            # flooring keeps their steps bounded instead of exploding them.
            out.append(np.maximum(s, 1e-2 * top))
    return out


def _fit_entry(entry_ds: TrajectoryDataset, init_params: list[np.ndarray],
               cfg_roll: RollConfig, cfg_train: TrainConfig, lr: float,
               degree: int, control_dim: int, dt: float, scheme: Scheme):
    """Adam on one entry's roll-out objective. Returns (params, history,
    diverged_at, init_failed); on mid-run divergence the last parameters with a
    finite objective are restored."""
    scales = _feature_scales(entry_ds, degree, control_dim)
    scaled = [p * c for p, c in zip(init_params, scales)]
    unscale = lambda ps: [p / c for p, c in zip(ps, scales)]
    adam = AdamOptimizer(scaled, cfg_train.adam_beta1, cfg_train.adam_beta2,
                         cfg_train.adam_eps, cfg_train.grad_clip)
    history: list[float] = []
    stash = None
    for t in range(1, cfg_train.max_iters + 1):
        params = unscale(scaled)
        try:
            j, (gA, gB) = rollout_gradient(
                _params_to_model(params, degree, control_dim, dt, scheme),
                entry_ds, cfg_roll)
        except DivergenceError:
            history.append(float("inf"))
            if stash is None:
                return params, np.array(history), t, True
            return stash, np.array(history), t, False
        history.append(j)
        grads = list(gA) + ([gB] if gB is not None else [])
        grads = [g / c for g, c in zip(grads, scales)]
        stash = params
        adam.update(scaled, grads, lr)
    params = unscale(scaled)
    final_j = rollout_objective(
        _params_to_model(params, degree, control_dim, dt, scheme),
        entry_ds, cfg_roll)
    if not np.isfinite(final_j) and stash is not None:
        # Final update overshot; keep the previous iterate.
        params = stash
        final_j = history[-1]
    history.append(final_j)
    return params, np.array(history), None, not np.isfinite(final_j)


def train(dataset_train: TrajectoryDataset, dataset_valid: TrajectoryDataset,
          basis: ReducedBasis, cfg_roll: RollConfig, cfg_train: TrainConfig,
          scheme: Scheme, degree: int,
          control_dim: int | None = None) -> TrainReport:
    """Fit roll-out models for every training entry and pick the learning rate
    with the lowest validation error.

    ``dataset_train`` must hold reduced states; ``dataset_valid`` must hold
    full states (its initial conditions are projected with ``basis`` and the
    predictions lifted back for the relative-error computation). Entries are
    trained independently, one model per training input; validation inputs are
    served by operator interpolation between the trained models (falling back
    to the nearest training input when the parameter layout does not support
    interpolation).
    """
    t_start = time.perf_counter()
    scheme = Scheme(scheme)
    n = dataset_train.state_dim
    if n != basis.reduced_dim:
        raise ValueError(f"training data dim {n} != basis reduced_dim {basis.reduced_dim}")
    if dataset_valid.state_dim != basis.full_dim:
        raise ValueError("validation dataset must carry full states")
    p = dataset_train.control_dim if control_dim is None else control_dim
    if p != dataset_train.control_dim:
        raise ValueError("control_dim disagrees with the training dataset")
    dt = dataset_train.dt
    if dataset_valid.dt != dt:
        raise ValueError("training and validation time steps differ")
    if not _window_layout(min(e.trajectory.num_steps for e in dataset_train), cfg_roll)[1]:
        raise ValueError("roll-out configuration yields no misfit terms "
                         "(roll_length shorter than the sampling period?)")

    entry_sets = [TrajectoryDataset((e,)) for e in dataset_train]
    inits = []
    for es in entry_sets:
        if cfg_train.init is InitStrategy.ZEROS:
            inits.append(_zero_params(n, degree, p))
        else:
            inits.append(_static_params(es, degree, cfg_roll.sparse_period))

    train_params = dataset_train.params()
    histories: dict[float, tuple[np.ndarray, ...]] = {}
    divergences: dict[float, tuple[int | None, ...]] = {}
    val_errors: dict[float, float] = {}
    candidate_models: dict[float, tuple[PolyModel, ...]] = {}
    for lr in cfg_train.learning_rates:
        models = []
        hists = []
        divs = []
        failed = False
        for es, init in zip(entry_sets, inits):
            params, hist, div_at, init_failed = _fit_entry(
                es, init, cfg_roll, cfg_train, lr, degree, p, dt, scheme)
            hists.append(hist)
            divs.append(div_at)
            failed = failed or init_failed
            models.append(_params_to_model(params, degree, p, dt, scheme))
        histories[lr] = tuple(hists)
        divergences[lr] = tuple(divs)
        if failed:
            val_errors[lr] = float("inf")
            continue
        candidate_models[lr] = tuple(models)
        predictors = [
            metrics.model_at_param(train_params, models, e.param, strict=False)
            for e in dataset_valid]
        val_errors[lr] = metrics.time_averaged_relative_error(
            dataset_valid, predictors, basis)

    if not candidate_models:
        raise TrainingFailedError(
            "every learning-rate candidate diverged at initialization",
            diagnostics={lr: divergences[lr] for lr in cfg_train.learning_rates})
    selected = min(candidate_models, key=lambda lr: (val_errors[lr], lr))
    return TrainReport(
        selected_rate=selected,
        models=candidate_models[selected],
        validation_error=val_errors[selected],
        validation_errors=val_errors,
        loss_histories=histories,
        divergence=divergences,
        train_params=train_params,
        seed=cfg_train.seed,
        wall_seconds=time.perf_counter() - t_start,
    )
