"""Polynomial vector fields, monomial feature maps, discrete flow maps, simulation.

The right-hand side is f(q, u) = sum_l A_l * phi_l(q) + B u, where phi_l(q)
collects all degree-l monomials of q that are unique up to commutativity.
Two flow maps are provided: forward Euler and a semi-implicit scheme that
treats the linear operator implicitly and every degree >= 2 term explicitly.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations_with_replacement

import numpy as np

from .datamodel import TimeGrid, Trajectory, _parse_keyvalue, load_matrix, save_matrix
from .errors import CapacityError, DivergenceError, FormatError, IntegratorError

# Flag a state as divergent once it exceeds this multiple of the initial magnitude.
DIVERGENCE_FACTOR = 1e6
# Refuse an implicit solve whose matrix condition number exceeds this.
MAX_IMPLICIT_CONDITION = 1e12


class Scheme(enum.Enum):
    FORWARD_EULER = "forward_euler"
    IMEX_LINEAR_IMPLICIT = "imex"


def monomial_count(n: int, l: int) -> int:
    """Number of degree-l monomials in n variables unique up to commutativity."""
    if n < 1 or l < 1:
        raise ValueError(f"need n >= 1 and l >= 1, got n={n}, l={l}")
    count = math.comb(n + l - 1, l)
    if count > 2**62:
        raise CapacityError(f"monomial count C({n + l - 1},{l}) exceeds addressable size")
    return count


@dataclass(frozen=True)
class MonomialIndexing:
    """Canonical ordering of the degree-l monomials in n variables.

    Monomials are ordered by their index multisets (i_1 <= ... <= i_l) in
    ascending lexicographic order, which is graded-lexicographic descending on
    the exponent vectors: for n = 2, l = 2 the order is [q1^2, q1*q2, q2^2].
    This one layout is shared by the feature maps, the operator column
    conventions, and the static regression.
    """

    n: int
    degree: int
    combos: np.ndarray          # (n_l, l) sorted index multisets
    exponents: np.ndarray       # (n_l, n) exponent vectors
    # Nonzero partial derivatives d(phi_m)/d(q_j) = mult * phi^{l-1}_lower,
    # flattened into parallel arrays for vectorized adjoint accumulation;
    # scatter[j, t] = mult[t] when d_component[t] == j collects them per row.
    d_monomial: np.ndarray
    d_component: np.ndarray
    d_lower: np.ndarray
    d_mult: np.ndarray
    scatter: np.ndarray

    def __len__(self) -> int:
        return self.combos.shape[0]


_INDEXING_CACHE: dict[tuple[int, int], MonomialIndexing] = {}


def monomial_indexing(n: int, l: int) -> MonomialIndexing:
    key = (n, l)
    cached = _INDEXING_CACHE.get(key)
    if cached is not None:
        return cached
    combos = list(combinations_with_replacement(range(n), l))
    combo_arr = np.array(combos, dtype=np.intp).reshape(len(combos), l)
    exponents = np.zeros((len(combos), n), dtype=np.intp)
    for m, combo in enumerate(combos):
        for j in combo:
            exponents[m, j] += 1
    if l == 1:
        lower_index = {(): 0}
    else:
        lower_index = {c: i for i, c in
                       enumerate(combinations_with_replacement(range(n), l - 1))}
    dm, dc, dl, dw = [], [], [], []
    for m, combo in enumerate(combos):
        for j in sorted(set(combo)):
            reduced = list(combo)
            reduced.remove(j)
            dm.append(m)
            dc.append(j)
            dl.append(lower_index[tuple(reduced)])
            dw.append(float(exponents[m, j]))
    scatter = np.zeros((n, len(dm)))
    scatter[np.array(dc, dtype=np.intp), np.arange(len(dm))] = dw
    idx = MonomialIndexing(
        n=n, degree=l, combos=combo_arr, exponents=exponents,
        d_monomial=np.array(dm, dtype=np.intp),
        d_component=np.array(dc, dtype=np.intp),
        d_lower=np.array(dl, dtype=np.intp),
        d_mult=np.array(dw, dtype=float),
        scatter=scatter,
    )
    _INDEXING_CACHE[key] = idx
    return idx


def feature_columns(Q: np.ndarray, l: int) -> np.ndarray:
    """Degree-l monomials of every column of Q: (n, W) -> (n_l, W)."""
    if l == 1:
        return Q
    idx = monomial_indexing(Q.shape[0], l)
    out = Q[idx.combos[:, 0], :].copy()
    for t in range(1, l):
        out *= Q[idx.combos[:, t], :]
    return out


def feature_map(q: np.ndarray, l: int) -> np.ndarray:
    """Degree-l monomial feature vector of a single state."""
    q = np.asarray(q, dtype=float)
    if not np.isfinite(q).all():
        raise ValueError("feature_map requires finite input")
    return feature_columns(q.reshape(-1, 1), l)[:, 0]


def feature_vjp(Q: np.ndarray, cotangent: np.ndarray, l: int) -> np.ndarray:
    """Apply the transposed Jacobian of the degree-l feature map.

    Given states Q (n, W) and a cotangent (n_l, W) on phi_l(Q), returns
    d(phi_l)/dq^T @ cotangent column-wise, shape (n, W).
    """
    if l == 1:
        return cotangent
    idx = monomial_indexing(Q.shape[0], l)
    phi_prev = feature_columns(Q, l - 1)
    contrib = cotangent[idx.d_monomial, :] * phi_prev[idx.d_lower, :]
    return idx.scatter @ contrib


@dataclass(frozen=True)
class PolyModel:
    """Degree-L polynomial model: operators (A_1..A_L), control matrix B, dt, scheme."""

    operators: tuple[np.ndarray, ...]
    B: np.ndarray | None
    dt: float
    scheme: Scheme

    def __post_init__(self):
        if not self.operators:
            raise ValueError("model needs at least the linear operator A_1")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        ops = []
        n = np.atleast_2d(self.operators[0]).shape[0]
        for l, A in enumerate(self.operators, start=1):
            A = np.array(A, dtype=float, copy=True)
            A = np.atleast_2d(A)
            expected = (n, monomial_count(n, l))
            if A.shape != expected:
                raise ValueError(f"A_{l} must have shape {expected}, got {A.shape}")
            if not np.isfinite(A).all():
                raise ValueError(f"A_{l} contains non-finite entries")
            A.setflags(write=False)
            ops.append(A)
        object.__setattr__(self, "operators", tuple(ops))
        if self.B is not None:
            B = np.atleast_2d(np.array(self.B, dtype=float, copy=True))
            if B.shape[0] != n:
                raise ValueError(f"B must have {n} rows, got {B.shape}")
            if not np.isfinite(B).all():
                raise ValueError("B contains non-finite entries")
            B.setflags(write=False)
            object.__setattr__(self, "B", B)
        if not isinstance(self.scheme, Scheme):
            object.__setattr__(self, "scheme", Scheme(self.scheme))

    @property
    def state_dim(self) -> int:
        return self.operators[0].shape[0]

    @property
    def control_dim(self) -> int:
        return 0 if self.B is None else self.B.shape[1]

    @property
    def degree(self) -> int:
        return len(self.operators)

    @cached_property
    def _implicit_inverse(self) -> np.ndarray:
        """Inverse of (I - dt*A_1), computed once per model.

        Models are immutable, so the cache never goes stale. The explicit
        inverse keeps the IMEX step a single matmul in the hot loops; the
        condition gate below bounds the inversion error.
        """
        M = np.eye(self.state_dim) - self.dt * self.operators[0]
        cond = np.linalg.cond(M)
        if not np.isfinite(cond) or cond > MAX_IMPLICIT_CONDITION:
            raise IntegratorError(
                f"implicit matrix I - dt*A_1 is numerically singular (cond={cond:.3e})")
        return np.linalg.inv(M)

    def explicit_degrees(self) -> range:
        """Degrees whose terms are evaluated explicitly by the scheme."""
        if self.scheme is Scheme.FORWARD_EULER:
            return range(1, self.degree + 1)
        return range(2, self.degree + 1)


def rhs(model: PolyModel, q: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
    """Evaluate f(q, u) = sum_l A_l phi_l(q) + B u."""
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != model.state_dim:
        raise ValueError(f"state has dim {q.shape[0]}, model expects {model.state_dim}")
    return rhs_columns(model, q.reshape(-1, 1), _as_control_columns(model, u))[:, 0]


def _as_control_columns(model: PolyModel, u) -> np.ndarray | None:
    if model.control_dim == 0:
        if u is not None and np.asarray(u).size:
            raise ValueError("model has no control matrix but a control was supplied")
        return None
    if u is None:
        raise ValueError(f"model expects a control of dim {model.control_dim}")
    u = np.asarray(u, dtype=float).reshape(-1, 1)
    if u.shape[0] != model.control_dim:
        raise ValueError(f"control has dim {u.shape[0]}, model expects {model.control_dim}")
    return u


def rhs_columns(model: PolyModel, Q: np.ndarray, U: np.ndarray | None = None) -> np.ndarray:
    """Column-wise rhs evaluation on a batch of states (n, W)."""
    out = model.operators[0] @ Q
    for l in range(2, model.degree + 1):
        out += model.operators[l - 1] @ feature_columns(Q, l)
    if model.B is not None:
        if U is None:
            raise ValueError("model has controls, none supplied")
        out += model.B @ U
    return out


def step_columns(model: PolyModel, Q: np.ndarray, U: np.ndarray | None = None) -> np.ndarray:
    """Advance a batch of states one step with the model scheme."""
    if model.scheme is Scheme.FORWARD_EULER:
        return Q + model.dt * rhs_columns(model, Q, U)
    rhs_expl = Q.copy()
    for l in range(2, model.degree + 1):
        rhs_expl += model.dt * (model.operators[l - 1] @ feature_columns(Q, l))
    if model.B is not None:
        if U is None:
            raise ValueError("model has controls, none supplied")
        rhs_expl += model.dt * (model.B @ U)
    return model._implicit_inverse @ rhs_expl


def step(model: PolyModel, q: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
    """One application of the discrete flow map to a single state."""
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != model.state_dim:
        raise ValueError(f"state has dim {q.shape[0]}, model expects {model.state_dim}")
    out = step_columns(model, q.reshape(-1, 1), _as_control_columns(model, u))[:, 0]
    if not np.isfinite(out).all():
        raise DivergenceError("flow map produced non-finite state", step_index=1)
    return out


@dataclass(frozen=True)
class SimulationResult:
    """States produced by :func:`simulate`, plus divergence bookkeeping.

    ``states`` holds the initial condition and every completed step; when the
    run diverged, ``divergence_step`` is the 1-based index of the step whose
    output was rejected (that state is not included).
    """

    states: np.ndarray
    dt: float
    diverged: bool = False
    divergence_step: int | None = None

    @property
    def num_completed_steps(self) -> int:
        return self.states.shape[1] - 1

    def trajectory(self, t0: float = 0.0,
                   controls: np.ndarray | None = None) -> Trajectory:
        if self.num_completed_steps < 1:
            raise DivergenceError(
                "simulation diverged before completing a single step",
                step_index=self.divergence_step)
        grid = TimeGrid(t0=t0, dt=self.dt, num_steps=self.num_completed_steps)
        if controls is not None:
            controls = controls[:, :self.num_completed_steps]
        return Trajectory(self.states, grid, controls)


def divergence_threshold(initial_magnitude: float) -> float:
    return DIVERGENCE_FACTOR * (1.0 + initial_magnitude)


def simulate(model: PolyModel, q0: np.ndarray,
             controls: np.ndarray | None = None,
             num_steps: int | None = None) -> SimulationResult:
    """Roll the flow map ``num_steps`` times from ``q0``.

    Controls, when present, must supply one column per step. A state is
    flagged divergent when any entry is non-finite or its max-norm exceeds
    1e6 * (1 + max|q0|); the offending state is dropped and the partial
    result returned with the 1-based step index.
    """
    q0 = np.asarray(q0, dtype=float).reshape(-1)
    if q0.shape[0] != model.state_dim:
        raise ValueError(f"q0 has dim {q0.shape[0]}, model expects {model.state_dim}")
    if model.control_dim > 0:
        if controls is None:
            raise ValueError("model has controls, none supplied")
        controls = np.atleast_2d(np.asarray(controls, dtype=float))
        if num_steps is None:
            num_steps = controls.shape[1]
        if controls.shape != (model.control_dim, num_steps):
            raise ValueError(
                f"controls must have shape ({model.control_dim}, {num_steps})")
    elif num_steps is None:
        raise ValueError("num_steps is required for models without controls")
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")

    threshold = divergence_threshold(np.abs(q0).max(initial=0.0))
    states = np.empty((model.state_dim, num_steps + 1))
    states[:, 0] = q0
    Q = q0.reshape(-1, 1)
    for k in range(1, num_steps + 1):
        U = controls[:, k - 1:k] if controls is not None else None
        Q = step_columns(model, Q, U)
        if not np.isfinite(Q).all() or np.abs(Q).max() > threshold:
            return SimulationResult(states[:, :k].copy(), model.dt,
                                    diverged=True, divergence_step=k)
        states[:, k] = Q[:, 0]
    return SimulationResult(states, model.dt)


# ---------------------------------------------------------------------------
# Persistence: manifest plus one ROM1 file per operator
# ---------------------------------------------------------------------------

def save_model(model: PolyModel, directory: str | os.PathLike,
               manifest_name: str = "model.manifest") -> str:
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    lines = [
        f"degree={model.degree}",
        f"state_dim={model.state_dim}",
        f"control_dim={model.control_dim}",
        f"dt={model.dt!r}",
        f"scheme={model.scheme.value}",
    ]
    for l, A in enumerate(model.operators, start=1):
        name = f"A{l}.rom1"
        save_matrix(os.path.join(directory, name), A)
        lines.append(f"operator.{l}={name}")
    if model.B is not None:
        save_matrix(os.path.join(directory, "B.rom1"), model.B)
        lines.append("control=B.rom1")
    path = os.path.join(directory, manifest_name)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def load_model(path: str | os.PathLike) -> PolyModel:
    """Load a model from its manifest (or the directory containing ``model.manifest``)."""
    path = os.fspath(path)
    if os.path.isdir(path):
        path = os.path.join(path, "model.manifest")
    if not os.path.isfile(path):
        raise FormatError(f"model manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    kv = _parse_keyvalue(path)
    try:
        degree = int(kv["degree"])
        dt = float(kv["dt"])
        scheme = Scheme(kv["scheme"])
        operators = tuple(load_matrix(os.path.join(base, kv[f"operator.{l}"]))
                          for l in range(1, degree + 1))
    except KeyError as exc:
        raise FormatError(f"{path}: missing manifest key {exc}") from exc
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    B = None
    if "control" in kv:
        B = load_matrix(os.path.join(base, kv["control"]))
    return PolyModel(operators=operators, B=B, dt=dt, scheme=scheme)
