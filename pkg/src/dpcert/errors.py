"""Exception hierarchy. The CLI maps these onto exit codes."""


class DpCertError(Exception):
    exit_code = 1


class ConfigError(DpCertError, ValueError):
    """Invalid configuration or dimension mismatch."""
    exit_code = 2


class ValidationError(DpCertError, ValueError):
    """Input data violates an operation's precondition."""
    exit_code = 3


class DomainError(ValidationError):
    """Argument outside a function's mathematical domain."""


class DataError(DpCertError):
    """Unreadable or inconsistent dataset / report files."""
    exit_code = 3


class IdxParseError(DataError):
    def __init__(self, path, offset, reason):
        self.path = path
        self.offset = offset
        super().__init__(f"{path}: byte offset {offset}: {reason}")


class BudgetError(DpCertError):
    """Privacy budget exhausted before training could start."""
    exit_code = 4
