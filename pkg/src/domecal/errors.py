"""Exception hierarchy shared by the whole package.

Every error that parsing, loading, or solving can signal on bad input is a
subclass of :class:`DomecalError`, so callers can catch one base type and
distinguish "the input was bad" from a genuine bug.
"""
from __future__ import annotations


class DomecalError(Exception):
    """Base class for all structured errors raised by this package."""


# ---------------------------------------------------------------------------
# Text model parsing


class MalformedLine(DomecalError):
    """A line of a text model file could not be parsed."""

    def __init__(self, filename: str, line_number: int, detail: str):
        self.filename = filename
        self.line_number = line_number
        self.detail = detail
        super().__init__(f"{filename}:{line_number}: {detail}")


class UnsupportedCameraModel(DomecalError):
    """The camera model named in a cameras file is not supported."""

    def __init__(self, model_name: str):
        self.model_name = model_name
        super().__init__(f"unsupported camera model {model_name!r}")


class DanglingReference(DomecalError):
    """A cross-reference between model files points at a missing record."""

    def __init__(self, kind: str, ref_id: object, detail: str = ""):
        self.kind = kind
        self.ref_id = ref_id
        msg = f"dangling {kind} reference: {ref_id}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class MissingCamera(DomecalError):
    """A required camera is absent from a file or directory."""

    def __init__(self, camera_id: object, detail: str = ""):
        self.camera_id = camera_id
        msg = f"missing camera {camera_id}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonUnitQuaternion(DomecalError):
    """A quaternion deviates too far from unit norm to be renormalized."""

    def __init__(self, filename: str, line_number: int, norm: float):
        self.filename = filename
        self.line_number = line_number
        self.norm = norm
        super().__init__(
            f"{filename}:{line_number}: quaternion norm {norm:.6g} deviates "
            f"from 1 by more than the tolerated 1e-3"
        )


class InvalidValue(DomecalError):
    """A configuration or parameter value violates its constraints."""

    def __init__(self, key: str, detail: str = ""):
        self.key = key
        msg = f"invalid value for {key!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class IoFailure(DomecalError):
    """An underlying file or directory operation failed."""

    def __init__(self, path: str, detail: str = ""):
        self.path = str(path)
        msg = f"I/O failure on {path}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class InconsistentCamera(DomecalError):
    """The same physical camera has conflicting records across frames."""

    def __init__(self, name: str, detail: str = ""):
        self.name = name
        msg = f"inconsistent camera {name!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


# ---------------------------------------------------------------------------
# Patch store


class MalformedHeader(DomecalError):
    """A patch container file starts with an invalid header."""

    def __init__(self, path: str, detail: str):
        self.path = str(path)
        super().__init__(f"{path}: {detail}")


class TruncatedFile(DomecalError):
    """A patch container file ends before its declared payload."""

    def __init__(self, path: str, offset: int):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: truncated at byte offset {offset}")


class DuplicateKey(DomecalError):
    """Two patches claim the same (frame, camera, keypoint) key."""

    def __init__(self, key: tuple):
        self.key = key
        super().__init__(f"duplicate patch key {key}")


class OutOfPatch(DomecalError):
    """A lookup point lies outside a patch's safe interior."""

    def __init__(self, point, detail: str = ""):
        self.point = tuple(float(v) for v in point)
        msg = f"point {self.point} outside patch safe interior"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DimensionMismatch(DomecalError):
    """Vectors that must share a dimension do not."""

    def __init__(self, detail: str):
        super().__init__(detail)


# ---------------------------------------------------------------------------
# Geometry and optimization


class BehindCamera(DomecalError):
    """A point projects at or behind the camera plane."""

    def __init__(self, depth: float):
        self.depth = float(depth)
        super().__init__(f"point depth {self.depth:.6g} is below the epsilon")


class NumericalFailure(DomecalError):
    """The solver produced a non-finite cost or derivative."""

    def __init__(self, detail: str, residual_id: int | None = None):
        self.residual_id = residual_id
        if residual_id is not None:
            detail += f" (residual block {residual_id})"
        super().__init__(detail)


class DegenerateConfiguration(DomecalError):
    """A generated or loaded scene is too degenerate to be usable."""

    def __init__(self, detail: str):
        super().__init__(detail)


class AlreadyTerminated(DomecalError):
    """The weight schedule was advanced past its termination point."""

    def __init__(self):
        super().__init__("schedule already terminated; cannot advance")


class KeyMismatch(DomecalError):
    """Two keyed collections that must share keys do not."""

    def __init__(self, detail: str):
        super().__init__(detail)


class EmptyInput(DomecalError):
    """An aggregate was requested over an empty collection."""

    def __init__(self, detail: str = "empty input"):
        super().__init__(detail)
