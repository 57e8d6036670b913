"""Exception types shared across the extraction pipeline."""


class InputError(ValueError):
    """Malformed or inconsistent input (bad dimensions, invalid parameters)."""


class RegistrationFailure(RuntimeError):
    """Point cloud registration could not produce a usable transform.

    ``best_effort`` carries the best transform found so far (may be the
    initialization), ``frame_index`` tags the offending frame pair when the
    failure happened inside a per-clip pipeline.
    """

    def __init__(self, message, best_effort=None, frame_index=None):
        super().__init__(message)
        self.best_effort = best_effort
        self.frame_index = frame_index


class DegenerateGeometryError(RuntimeError):
    """Too few / rank-deficient points for a geometric estimate."""

    def __init__(self, message, frame_index=None):
        super().__init__(message)
        self.frame_index = frame_index


class CurationReject(Exception):
    """A clip failed an automated curation rule. ``reason`` is one of REASONS."""

    REASONS = (
        "low-confidence",
        "registration-failure",
        "degenerate-geometry",
        "out-of-frame",
        "non-rigid",
    )

    def __init__(self, reason, detail=""):
        if reason not in self.REASONS:
            raise ValueError(f"unknown curation reason {reason!r}")
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class DecodeError(ValueError):
    """Token stream contains an id outside the reserved range."""

    def __init__(self, message, position):
        super().__init__(message)
        self.position = position
