"""Trajectory containers, bit-exact matrix/dataset I/O, noise injection, sparsification.

All container types are immutable after construction (arrays are copied and
marked read-only), so they can be shared freely across threads.
"""

from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateDataError, FormatError

ROM1_MAGIC = b"ROM1"
ROM1_VERSION = 1
_ROM1_HEADER = struct.Struct("<4sIQQ")

# Accepted CSV tokens: plain decimal floats plus nan/inf spellings (which then
# fail the finiteness check as a DataError, not a FormatError).
_FLOAT_RE = re.compile(
    r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$|^[+-]?(?:nan|inf|infinity)$",
    re.IGNORECASE,
)


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TimeGrid:
    """Equidistant time grid t_k = t0 + k*dt for k = 0..num_steps."""

    t0: float
    dt: float
    num_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.num_steps + 1)

    @property
    def t_final(self) -> float:
        return self.t0 + self.dt * self.num_steps


@dataclass(frozen=True)
class Trajectory:
    """States (d x (K+1), column k = state at t_k) with optional controls (p x K)."""

    states: np.ndarray
    grid: TimeGrid
    controls: np.ndarray | None = None

    def __post_init__(self):
        states = _frozen(self.states)
        if states.ndim != 2:
            raise ValueError(f"states must be 2-D, got shape {states.shape}")
        if states.shape[1] != self.grid.num_steps + 1:
            raise ValueError(
                f"states has {states.shape[1]} columns, expected "
                f"num_steps + 1 = {self.grid.num_steps + 1}")
        if not np.isfinite(states).all():
            raise DataError("trajectory states contain non-finite entries")
        object.__setattr__(self, "states", states)
        if self.controls is not None:
            controls = _frozen(self.controls)
            if controls.ndim != 2 or controls.shape[1] != self.grid.num_steps:
                raise ValueError(
                    f"controls must have shape (p, {self.grid.num_steps}), "
                    f"got {controls.shape}")
            if not np.isfinite(controls).all():
                raise DataError("trajectory controls contain non-finite entries")
            object.__setattr__(self, "controls", controls)

    @property
    def state_dim(self) -> int:
        return self.states.shape[0]

    @property
    def control_dim(self) -> int:
        return 0 if self.controls is None else self.controls.shape[0]

    @property
    def num_steps(self) -> int:
        return self.grid.num_steps


@dataclass(frozen=True)
class DatasetEntry:
    """One (input parameter, trajectory) pair."""

    param: np.ndarray
    trajectory: Trajectory

    def __post_init__(self):
        param = _frozen(np.atleast_1d(self.param))
        if param.ndim != 1:
            raise ValueError("param must be a vector")
        object.__setattr__(self, "param", param)


@dataclass(frozen=True)
class TrajectoryDataset:
    """Per-input trajectories sharing dimensions and time-step size."""

    entries: tuple[DatasetEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ValueError("dataset must contain at least one entry")
        d = entries[0].trajectory.state_dim
        p = entries[0].trajectory.control_dim
        dt = entries[0].trajectory.grid.dt
        pd = entries[0].param.shape[0]
        for e in entries[1:]:
            if e.trajectory.state_dim != d:
                raise ValueError("entries disagree on state_dim")
            if e.trajectory.control_dim != p:
                raise ValueError("entries disagree on control_dim")
            if e.trajectory.grid.dt != dt:
                raise ValueError("entries disagree on dt")
            if e.param.shape[0] != pd:
                raise ValueError("entries disagree on parameter dimension")
        object.__setattr__(self, "entries", entries)

    @property
    def state_dim(self) -> int:
        return self.entries[0].trajectory.state_dim

    @property
    def control_dim(self) -> int:
        return self.entries[0].trajectory.control_dim

    @property
    def param_dim(self) -> int:
        return self.entries[0].param.shape[0]

    @property
    def dt(self) -> float:
        return self.entries[0].trajectory.grid.dt

    def params(self) -> np.ndarray:
        """All entry parameters stacked as an (M, d) array."""
        return np.array([e.param for e in self.entries])

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True)
class SparseMask:
    """Retained time indices {0, xi, 2*xi, ...} for sampling period xi."""

    period: int
    retained_indices: tuple[int, ...]

    def __post_init__(self):
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")
        idx = tuple(int(i) for i in self.retained_indices)
        if not idx or idx[0] != 0:
            raise ValueError("retained_indices must start at 0")
        for a, b in zip(idx, idx[1:]):
            if b - a != self.period:
                raise ValueError("retained indices must be consecutive multiples of the period")
        object.__setattr__(self, "retained_indices", idx)

    @classmethod
    def for_grid(cls, period: int, num_steps: int) -> "SparseMask":
        if period < 1:
            raise ValueError(f"period must be >= 1, got {period}")
        return cls(period, tuple(range(0, num_steps + 1, period)))


# ---------------------------------------------------------------------------
# Matrix I/O
# ---------------------------------------------------------------------------

def save_matrix(path: str | os.PathLike, matrix: np.ndarray) -> None:
    """Write a matrix to ``path``: CSV for a ``.csv`` suffix, ROM1 binary otherwise.

    The binary format round-trips bit-exactly; CSV is written with 17
    significant digits so the decimal text round-trips value-exactly.
    """
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if not np.isfinite(m).all():
        raise DataError("refusing to store non-finite matrix entries")
    path = os.fspath(path)
    if path.endswith(".csv"):
        lines = [",".join(format(v, ".17g") for v in row) for row in m]
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        return
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(_ROM1_HEADER.pack(ROM1_MAGIC, ROM1_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(m).tobytes())


def load_matrix(path: str | os.PathLike) -> np.ndarray:
    """Read a matrix stored by :func:`save_matrix` (format is sniffed)."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head == ROM1_MAGIC:
            return _load_rom1(fh, path)
    return _load_csv(path)


def _load_rom1(fh, path: str) -> np.ndarray:
    rest = fh.read(_ROM1_HEADER.size - 4)
    if len(rest) != _ROM1_HEADER.size - 4:
        raise FormatError(f"{path}: truncated ROM1 header", offset=4 + len(rest))
    version, rows, cols = struct.unpack("<IQQ", rest)
    if version != ROM1_VERSION:
        raise FormatError(f"{path}: unsupported ROM1 version {version}", offset=4)
    payload = fh.read()
    expected = rows * cols * 8
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes, "
            f"{rows}x{cols} matrix needs {expected}",
            offset=_ROM1_HEADER.size + min(len(payload), expected))
    m = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(float)
    if not np.isfinite(m).all():
        raise DataError(f"{path}: matrix contains non-finite entries")
    return m


def _load_csv(path: str) -> np.ndarray:
    rows = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split(",")
            if width is None:
                width = len(tokens)
            elif len(tokens) != width:
                raise FormatError(
                    f"{path}: row has {len(tokens)} fields, expected {width}",
                    offset=lineno)
            row = []
            for tok in tokens:
                tok = tok.strip()
                if not _FLOAT_RE.match(tok):
                    raise FormatError(f"{path}: malformed number {tok!r}", offset=lineno)
                row.append(float(tok))
            rows.append(row)
    if not rows:
        raise FormatError(f"{path}: empty CSV matrix", offset=1)
    m = np.array(rows, dtype=float)
    if not np.isfinite(m).all():
        raise DataError(f"{path}: matrix contains non-finite entries")
    return m


# ---------------------------------------------------------------------------
# Dataset manifest I/O
# ---------------------------------------------------------------------------

def save_dataset(dataset: TrajectoryDataset, directory: str | os.PathLike,
                 manifest_name: str = "dataset.manifest") -> str:
    """Persist a dataset as a key=value manifest plus one ROM1 file per matrix."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    t0 = dataset.entries[0].trajectory.grid.t0
    lines = [
        f"state_dim={dataset.state_dim}",
        f"control_dim={dataset.control_dim}",
        f"t0={t0!r}",
        f"dt={dataset.dt!r}",
        f"entries={len(dataset)}",
    ]
    for i, entry in enumerate(dataset):
        if entry.trajectory.grid.t0 != t0:
            raise ValueError("manifest format requires a shared t0 across entries")
        states_name = f"states_{i}.rom1"
        save_matrix(os.path.join(directory, states_name), entry.trajectory.states)
        lines.append("entry.%d.param=%s" % (
            i, ",".join(format(v, ".17g") for v in entry.param)))
        lines.append(f"entry.{i}.states={states_name}")
        if entry.trajectory.controls is not None:
            controls_name = f"controls_{i}.rom1"
            save_matrix(os.path.join(directory, controls_name), entry.trajectory.controls)
            lines.append(f"entry.{i}.controls={controls_name}")
    manifest_path = os.path.join(directory, manifest_name)
    with open(manifest_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest_path


def _parse_keyvalue(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}: expected key=value", offset=lineno)
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def load_dataset(manifest_path: str | os.PathLike) -> TrajectoryDataset:
    """Load a dataset from a manifest written by :func:`save_dataset`."""
    manifest_path = os.fspath(manifest_path)
    if not os.path.isfile(manifest_path):
        raise FormatError(f"dataset manifest not found: {manifest_path}")
    base = os.path.dirname(os.path.abspath(manifest_path))
    kv = _parse_keyvalue(manifest_path)
    try:
        state_dim = int(kv["state_dim"])
        control_dim = int(kv["control_dim"])
        t0 = float(kv["t0"])
        dt = float(kv["dt"])
        num_entries = int(kv["entries"])
    except KeyError as exc:
        raise FormatError(f"{manifest_path}: missing manifest key {exc}") from exc
    entries = []
    for i in range(num_entries):
        try:
            param = np.array([float(v) for v in kv[f"entry.{i}.param"].split(",")])
            states = load_matrix(os.path.join(base, kv[f"entry.{i}.states"]))
        except KeyError as exc:
            raise FormatError(f"{manifest_path}: missing manifest key {exc}") from exc
        controls = None
        if control_dim > 0:
            controls = load_matrix(os.path.join(base, kv[f"entry.{i}.controls"]))
        if states.shape[0] != state_dim:
            raise FormatError(
                f"{manifest_path}: entry {i} states have {states.shape[0]} rows, "
                f"manifest says state_dim={state_dim}")
        grid = TimeGrid(t0=t0, dt=dt, num_steps=states.shape[1] - 1)
        entries.append(DatasetEntry(param, Trajectory(states, grid, controls)))
    return TrajectoryDataset(tuple(entries))


# ---------------------------------------------------------------------------
# Noise and time sparsification
# ---------------------------------------------------------------------------

def add_noise(dataset: TrajectoryDataset, rho: float, seed: int) -> TrajectoryDataset:
    """Pollute state columns k = 1..K-1 with q_k + rho * eps_k * |q_k|.

    ``eps_k`` entries are i.i.d. standard normal, drawn in order of entry,
    then time index, then component, from one ``numpy`` PCG64 stream seeded
    with ``seed``. Columns 0 and K stay clean.
    """
    if rho < 0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    rng = np.random.default_rng(seed)
    entries = []
    for entry in dataset:
        traj = entry.trajectory
        states = traj.states.copy()
        k = traj.num_steps
        if k >= 2:
            eps = rng.standard_normal((k - 1, traj.state_dim)).T
            states[:, 1:k] += rho * eps * np.abs(states[:, 1:k])
        entries.append(DatasetEntry(entry.param,
                                    Trajectory(states, traj.grid, traj.controls)))
    return TrajectoryDataset(tuple(entries))


def sparsify(traj: Trajectory, period: int) -> tuple[Trajectory, SparseMask]:
    """Keep only states at indices {0, xi, 2*xi, ...}; the new grid has dt' = xi*dt."""
    if period < 1:
        raise ValueError(f"period must be >= 1, got {period}")
    mask = SparseMask.for_grid(period, traj.num_steps)
    if len(mask.retained_indices) < 2:
        raise DegenerateDataError(
            f"period {period} retains fewer than 2 of {traj.num_steps + 1} states")
    if period == 1:
        return traj, mask
    idx = list(mask.retained_indices)
    states = traj.states[:, idx]
    controls = None
    if traj.controls is not None:
        controls = traj.controls[:, idx[:-1]]
    grid = TimeGrid(t0=traj.grid.t0, dt=traj.grid.dt * period, num_steps=len(idx) - 1)
    return Trajectory(states, grid, controls), mask


def sparsify_dataset(dataset: TrajectoryDataset, period: int) -> tuple[TrajectoryDataset, SparseMask]:
    """Apply :func:`sparsify` to every entry (all entries share one mask)."""
    sparsed = []
    mask = None
    for entry in dataset:
        traj, mask = sparsify(entry.trajectory, period)
        sparsed.append(DatasetEntry(entry.param, traj))
    return TrajectoryDataset(tuple(sparsed)), mask
