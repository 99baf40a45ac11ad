"""Shared exception types."""


class ContractViolation(ValueError):
    """An argument breaks a documented precondition (wrong shape, bad index, ...)."""


class NumericalError(RuntimeError):
    """A numerical routine failed in a way that cannot be recovered locally."""


class ProposalInvalid(RuntimeError):
    """A path proposal produced a non-finite or otherwise unusable state.

    Callers treat this as a Metropolis rejection, never as a crash.
    """


class ZeroGradientError(RuntimeError):
    """Bounce reflection requested at a point with (numerically) zero gradient."""


class ConfigError(ValueError):
    """Malformed configuration input; carries a line/key-precise message."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if key is not None:
            prefix += f"key '{key}': "
        super().__init__(prefix + message)
