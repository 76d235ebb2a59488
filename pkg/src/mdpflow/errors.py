"""Exception hierarchy shared by every layer of the framework."""

from __future__ import annotations


class MdpError(Exception):
    """Base class for all framework errors."""


class EngineAbort(MdpError):
    """Raised inside a stage and propagated unwrapped (not a user-function fault)."""


class BadParam(MdpError, ValueError):
    """A parameter is out of its documented range."""


# -- engine -----------------------------------------------------------------


class UserFnError(MdpError):
    """A user function raised while processing one element.

    ``index`` is the element's global position in the dataset the failing
    operator consumed; ``im_id`` is filled in when the element is a packed
    record.
    """

    def __init__(self, op: str, index: int, cause: BaseException, im_id: str | None = None):
        self.op = op
        self.index = index
        self.cause = cause
        self.im_id = im_id
        where = f"index={index}" + (f" im_id={im_id}" if im_id is not None else "")
        super().__init__(f"{op} failed at {where}: {cause!r}")


class MemoryExceeded(EngineAbort):
    """A driver or worker memory cap would be exceeded."""

    def __init__(self, where: str, requested: int, resident: int, cap: int, stage: str | None = None):
        self.where = where
        self.requested = requested
        self.resident = resident
        self.cap = cap
        self.stage = stage
        super().__init__(self._message())

    def _message(self) -> str:
        loc = f" at stage {self.stage}" if self.stage else ""
        return (
            f"{self.where} memory exceeded{loc}: resident {self.resident} + "
            f"{self.requested} bytes > cap {self.cap}"
        )

    def with_stage(self, stage: str) -> "MemoryExceeded":
        self.stage = stage
        self.args = (self._message(),)
        return self


class EmptyDataset(MdpError):
    """Reduce over an empty dataset without an identity element."""


# -- dataflow ---------------------------------------------------------------


class MalformedRecord(MdpError):
    pass


class MissingSlot(EngineAbort):
    def __init__(self, stage: str, slot: str, im_id: str | None = None):
        self.stage = stage
        self.slot = slot
        self.im_id = im_id
        super().__init__(f"{stage} requires slot '{slot}'" + (f" (record {im_id})" if im_id else ""))


class InvalidFusion(MdpError):
    pass


class PlanError(MdpError):
    pass


class SpecError(MdpError):
    """Pipeline spec file could not be parsed or validated."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(message)


# -- imgops -----------------------------------------------------------------


class BadChannels(MdpError, ValueError):
    pass


class EmptyInput(MdpError, ValueError):
    pass


class DegenerateInput(MdpError):
    pass


class TooSmall(MdpError, ValueError):
    pass


class InsufficientMatches(MdpError):
    pass


class DegenerateConfiguration(MdpError):
    pass


class SingularHomography(MdpError):
    pass


class ImageFormatError(MdpError, ValueError):
    pass


# -- pipelines --------------------------------------------------------------


class NoViableMatch(MdpError):
    pass


# -- storage ----------------------------------------------------------------


class StorageError(MdpError):
    def __init__(self, backend: str, message: str):
        self.backend = backend
        super().__init__(f"[{backend}] {message}")


class ChecksumMismatch(StorageError):
    def __init__(self, backend: str, key: str):
        self.key = key
        super().__init__(backend, f"checksum mismatch for key {key!r}")


class MissingKey(StorageError, KeyError):
    def __init__(self, backend: str, key: str):
        self.key = key
        StorageError.__init__(self, backend, f"missing key {key!r}")

    def __str__(self) -> str:
        return self.args[0]
