"""Exception hierarchy shared by every subpackage.

Everything raised for bad inputs or failed domain checks derives from
:class:`AdapterForgeError` so the CLI can map it to exit code 1.
"""


class AdapterForgeError(Exception):
    """Base class for domain errors."""


class ShapeError(AdapterForgeError, ValueError):
    pass


class RegistrationError(AdapterForgeError, KeyError):
    pass


class ConfigError(AdapterForgeError, ValueError):
    pass


class NonFiniteError(AdapterForgeError, FloatingPointError):
    """A loss, gradient or parameter became NaN/inf."""


class CTCInfeasibleError(AdapterForgeError, ValueError):
    """The target cannot be aligned to the given number of frames."""


class FormatError(AdapterForgeError, ValueError):
    """Malformed binary file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
