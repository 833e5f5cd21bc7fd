"""Exception hierarchy shared by all modules."""


class WombleError(Exception):
    """Base class for every error raised by funcwomble."""


class InputError(WombleError):
    """Malformed or inconsistent user input (maps to CLI exit code 2)."""


class GridMismatch(InputError):
    pass


class GridTooCoarse(InputError):
    pass


class DegenerateCurve(InputError):
    pass


class NonFiniteField(WombleError):
    pass


class InsufficientData(InputError):
    pass


class DegenerateCloud(WombleError):
    pass


class FitFailed(WombleError):
    """Variogram fitting did not converge; ``diagnostics`` holds per-start details."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class IllConditioned(WombleError):
    pass


class ChainStuck(WombleError):
    """An MCMC chain kept an acceptance rate below the floor after adaptation."""

    def __init__(self, message, acceptance=None):
        super().__init__(message)
        self.acceptance = acceptance
