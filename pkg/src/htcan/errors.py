"""Exception hierarchy shared by every htcan module."""


class HtcanError(Exception):
    """Base class for all errors raised by htcan."""


class ShapeError(HtcanError, ValueError):
    """Tensor dimensions are incompatible with the requested operation."""


class ConfigError(HtcanError, ValueError):
    """A configuration value is invalid (bad kind, bad divisor, bad schema)."""


class UsageError(HtcanError, ValueError):
    """An API was called outside its contract (e.g. non-scalar loss)."""


class LoadError(HtcanError, OSError):
    """A weight file or weight entry could not be loaded."""


class ContractError(HtcanError, RuntimeError):
    """A user-supplied callable broke a documented contract."""
