"""Exception types shared across the package."""


class SelfDistillError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SelfDistillError):
    """Tensor shapes violate an operation's contract."""


class ConfigError(SelfDistillError):
    """A configuration object carries invalid field values."""


class InputError(SelfDistillError):
    """Runtime input (token ids, labels, files) violates a precondition."""


class ContractError(SelfDistillError):
    """Two collections that must share a name set do not."""


class UsageError(SelfDistillError):
    """An API was called in a way its contract forbids."""


class DivergenceError(SelfDistillError):
    """Training produced a non-finite loss; the run is aborted."""
