"""
Exceptions raised across the FVSR engine.

Every error the engine raises on purpose derives from CrfpError so the CLI can
map it onto an exit status in one place.
"""


class CrfpError(Exception):
    pass


class ConfigurationError(CrfpError, ValueError):
    """Shapes, divisibility or configuration values that cannot work together."""


class UsageError(CrfpError, ValueError):
    """An API was called outside of its contract."""


class DataError(CrfpError):
    """A clip on disk could not be turned into a FrameSequence."""


class UndefinedRegion(CrfpError):
    """A metric region is empty (or too thin for the SSIM window)."""


class NonFiniteLoss(CrfpError):

    def __init__(self, iteration: int, value: float) -> None:
        super().__init__(f"non-finite loss {value!r} at iteration {iteration}")
        self.iteration = iteration
        self.value = value
