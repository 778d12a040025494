"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RollinfError(Exception):
    """Base class for all rollinf-specific failures."""


class FormatError(RollinfError):
    """A persisted file violates its declared layout.

    ``offset`` is the byte position (binary) or line number (text) at which
    the violation was detected, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(RollinfError):
    """Stored or supplied numeric data is unusable (non-finite, inconsistent)."""


class DegenerateDataError(DataError):
    """Too few samples remain to fit or differentiate anything."""


class RankDeficiencyError(RollinfError):
    """Requested more basis vectors than the data supports."""

    def __init__(self, message: str, achievable_rank: int):
        super().__init__(message)
        self.achievable_rank = achievable_rank


class IntegratorError(RollinfError):
    """The time-stepping scheme cannot be applied (e.g. singular implicit matrix)."""


class DivergenceError(RollinfError):
    """A simulation or roll-out blew up.

    ``step_index`` is the 1-based index of the offending step when known;
    ``objective`` carries the +inf objective value for training callers.
    """

    def __init__(self, message: str, step_index: int | None = None,
                 objective: float = float("inf")):
        super().__init__(message)
        self.step_index = step_index
        self.objective = objective


class NoCertificateError(RollinfError):
    """No Lyapunov certificate could be produced for the linear operator."""


class TrainingFailedError(RollinfError):
    """Every training candidate diverged; carries per-candidate diagnostics."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ExtrapolationError(RollinfError):
    """Interpolation query lies outside the hull of the training inputs."""


class CapacityError(RollinfError):
    """A requested count exceeds what the implementation can address."""
