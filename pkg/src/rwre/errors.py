"""Exception hierarchy.  Each class carries the process exit code used by the CLI."""


class RwreError(Exception):
    exit_code = 1


class ConfigError(RwreError):
    """Malformed or inconsistent configuration / law parameters."""

    exit_code = 2

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(ConfigError):
    """Operation requested outside its mathematical preconditions."""


class ResourceError(RwreError):
    """Memory or runtime guard refused the computation."""

    exit_code = 3


class NumericalError(RwreError):
    """A solver failed to reach its tolerance."""

    exit_code = 4

    def __init__(self, message: str, residual: float | None = None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)


class ContractError(RwreError):
    """A caller violated a documented precondition (e.g. window too small)."""

    exit_code = 4


class InsufficientDataError(RwreError):
    exit_code = 4
