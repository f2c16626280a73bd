class WeakKamError(Exception):
    """Base class for solver failures. `exit_code` is what the CLI returns."""
    exit_code = 1


class GraphError(WeakKamError, ValueError):
    pass


class SpecParseError(WeakKamError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ConfigurationError(WeakKamError, ValueError):
    pass


class PreconditionError(WeakKamError, ValueError):
    pass


class UnreachableStateError(WeakKamError, ValueError):
    pass


class NumericalDiagnostic(WeakKamError):
    exit_code = 2


class NegativeCycleError(NumericalDiagnostic):
    pass


class WindowTooSmallError(NumericalDiagnostic):
    pass
