"""Error types; each maps onto a CLI exit code."""


class MppError(Exception):
    exit_code = 3


class InputError(MppError, ValueError):
    """Malformed input or violated precondition."""
    exit_code = 2


class DomainError(InputError):
    """Point outside the injectivity domain of exp/log/theta."""


class DegenerateError(MppError, ValueError):
    """A formula has no finite answer for the given inputs.

    ``fallback`` carries a documented substitute value when one exists.
    """
    exit_code = 2

    def __init__(self, message, fallback=None):
        super().__init__(message)
        self.fallback = fallback


class AccuracyError(MppError, RuntimeError):
    """Quadrature refinements disagree beyond tolerance."""
    exit_code = 3


class ResourceError(MppError, RuntimeError):
    exit_code = 2


class InternalError(MppError, RuntimeError):
    exit_code = 3
