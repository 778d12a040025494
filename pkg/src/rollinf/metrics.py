"""Prediction-error metrics and operator interpolation at new inputs.

Error quotients follow the time-averaged relative form
    (1/M) * sum_j [ sum_k ||q_k - V qhat_k|| / sum_k ||q_k|| ],
where the norms are vector 2-norms of the state columns. A prediction whose
simulation diverges is replaced by the constant full-space initial condition
before the quotient is computed, so every entry contributes a finite error.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .basis import ReducedBasis
from .datamodel import TrajectoryDataset
from .errors import ExtrapolationError, IntegratorError
from .polymodel import PolyModel, simulate


def _entry_error(truth_states: np.ndarray, predicted_full: np.ndarray) -> float:
    num = np.linalg.norm(truth_states - predicted_full, axis=0).sum()
    den = np.linalg.norm(truth_states, axis=0).sum()
    if den == 0.0:
        raise ValueError("truth trajectory is identically zero; relative error undefined")
    return float(num / den)


def time_averaged_relative_error(truth: TrajectoryDataset,
                                 models: PolyModel | Sequence[PolyModel],
                                 basis: ReducedBasis) -> float:
    """Mean relative trajectory error of model predictions against full truth data.

    Each entry is simulated from the projected initial condition V^T q_0 with
    the entry's controls, lifted back with V, and compared column-wise against
    the truth states. ``models`` is either one shared model or one model per
    truth entry.
    """
    if truth.state_dim != basis.full_dim:
        raise ValueError(
            f"truth state_dim {truth.state_dim} != basis full_dim {basis.full_dim}")
    if isinstance(models, PolyModel):
        models = [models] * len(truth)
    elif len(models) != len(truth):
        raise ValueError(f"got {len(models)} models for {len(truth)} truth entries")
    errors = []
    for entry, model in zip(truth, models):
        if model.state_dim != basis.reduced_dim:
            raise ValueError("model dimension does not match the basis")
        traj = entry.trajectory
        if model.dt != traj.grid.dt:
            raise ValueError("model dt does not match the truth trajectory")
        q0 = traj.states[:, 0]
        try:
            result = simulate(model, basis.V.T @ q0, controls=traj.controls,
                              num_steps=traj.num_steps)
            diverged = result.diverged
        except IntegratorError:
            # Unusable implicit matrix: the model cannot be integrated at all,
            # which counts as an unstable prediction.
            diverged = True
        if diverged:
            predicted = np.tile(q0[:, None], (1, traj.num_steps + 1))
        else:
            predicted = basis.V @ result.states
        errors.append(_entry_error(traj.states, predicted))
    return float(np.mean(errors))


def projection_error(truth: TrajectoryDataset, basis: ReducedBasis) -> float:
    """Same quotient with the prediction V V^T q_k: the floor for any model in V."""
    if truth.state_dim != basis.full_dim:
        raise ValueError(
            f"truth state_dim {truth.state_dim} != basis full_dim {basis.full_dim}")
    errors = []
    for entry in truth:
        states = entry.trajectory.states
        errors.append(_entry_error(states, basis.V @ (basis.V.T @ states)))
    return float(np.mean(errors))


# ---------------------------------------------------------------------------
# Operator interpolation
# ---------------------------------------------------------------------------

def _check_compatible(models: Sequence[PolyModel]) -> None:
    m0 = models[0]
    for m in models[1:]:
        if (m.state_dim, m.degree, m.control_dim) != (m0.state_dim, m0.degree, m0.control_dim):
            raise ValueError("models disagree on dimensions or degree")
        if m.dt != m0.dt or m.scheme is not m0.scheme:
            raise ValueError("models disagree on dt or scheme")


def _blend(models: Sequence[PolyModel], weights: Sequence[float]) -> PolyModel:
    m0 = models[0]
    ops = []
    for l in range(m0.degree):
        ops.append(sum(w * m.operators[l] for w, m in zip(weights, models)))
    B = None
    if m0.B is not None:
        B = sum(w * m.B for w, m in zip(weights, models))
    return PolyModel(operators=tuple(ops), B=B, dt=m0.dt, scheme=m0.scheme)


def interpolate_operators(params: np.ndarray, models: Sequence[PolyModel],
                          query: np.ndarray) -> PolyModel:
    """Entry-wise (multi)linear interpolation of operator matrices at ``query``.

    For scalar inputs any two or more parameters define a piecewise-linear
    rule; for d >= 2 the parameters must be exactly the vertices of an
    axis-aligned grid and the rule is piecewise multilinear on its cells.
    Querying a training parameter returns that model's operators exactly.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    query = np.atleast_1d(np.asarray(query, dtype=float)).reshape(-1)
    if params.shape[0] != len(models):
        raise ValueError(f"{params.shape[0]} params for {len(models)} models")
    if params.shape[1] != query.shape[0]:
        raise ValueError("query dimension does not match the parameters")
    if params.shape[0] < 2:
        raise ValueError("interpolation needs at least two models")
    _check_compatible(models)

    lo, hi = params.min(axis=0), params.max(axis=0)
    if np.any(query < lo) or np.any(query > hi):
        raise ExtrapolationError(
            f"query {query.tolist()} lies outside the parameter box "
            f"[{lo.tolist()}, {hi.tolist()}]")

    if params.shape[1] == 1:
        order = np.argsort(params[:, 0], kind="stable")
        xs = params[order, 0]
        if np.any(np.diff(xs) <= 0):
            raise ValueError("1-D interpolation needs distinct parameter values")
        x = query[0]
        seg = int(np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2))
        x0, x1 = xs[seg], xs[seg + 1]
        t = (x - x0) / (x1 - x0)
        return _blend([models[order[seg]], models[order[seg + 1]]], [1.0 - t, t])

    # Axis-aligned grid: every dim's sorted unique coordinates, full product.
    axes = [np.unique(params[:, j]) for j in range(params.shape[1])]
    expected = int(np.prod([a.size for a in axes]))
    if expected != params.shape[0]:
        raise ValueError(
            "multilinear interpolation needs the parameters to be exactly the "
            f"vertices of an axis-aligned grid ({expected} vertices for these "
            f"coordinates, got {params.shape[0]} parameters)")
    index = {tuple(row): i for i, row in enumerate(params)}
    if len(index) != params.shape[0]:
        raise ValueError("duplicate parameter vectors")

    corner_ids = []
    corner_weights = []

    def recurse(j: int, coords: tuple[float, ...], weight: float) -> None:
        if j == len(axes):
            try:
                corner_ids.append(index[coords])
            except KeyError:
                raise ValueError(
                    "parameters do not form a full axis-aligned grid "
                    f"(missing vertex {coords})") from None
            corner_weights.append(weight)
            return
        ax = axes[j]
        x = query[j]
        if ax.size == 1:
            recurse(j + 1, coords + (ax[0],), weight)
            return
        seg = int(np.clip(np.searchsorted(ax, x, side="right") - 1, 0, ax.size - 2))
        x0, x1 = ax[seg], ax[seg + 1]
        t = (x - x0) / (x1 - x0)
        recurse(j + 1, coords + (x0,), weight * (1.0 - t))
        recurse(j + 1, coords + (x1,), weight * t)

    recurse(0, (), 1.0)
    return _blend([models[i] for i in corner_ids], corner_weights)


def model_at_param(params: np.ndarray, models: Sequence[PolyModel],
                   query: np.ndarray, strict: bool = True) -> PolyModel:
    """Model to use at ``query``: exact match, else interpolation.

    With ``strict=False`` an uninterpolable parameter layout (or a query
    outside the hull) falls back to the nearest training parameter, which is
    what the training loop uses for validation when the inputs do not form a
    grid.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    query = np.atleast_1d(np.asarray(query, dtype=float)).reshape(-1)
    for i in range(params.shape[0]):
        if np.array_equal(params[i], query):
            return models[i]
    if len(models) == 1:
        return models[0]
    try:
        return interpolate_operators(params, models, query)
    except (ValueError, ExtrapolationError):
        if strict:
            raise
        nearest = int(np.argmin(np.linalg.norm(params - query, axis=1)))
        return models[nearest]
