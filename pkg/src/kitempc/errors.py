"""Exception types raised across the package."""


class KiteError(Exception):
    """Base class for all package errors."""


class NearZenith(KiteError):
    """Elevation too close to pi/2; the azimuth rate is singular there."""


class ZeroVelocity(KiteError):
    """Heading is undefined because both line-angle rates vanish."""


class NoClosedPath(KiteError):
    pass


class WindowViolation(KiteError):
    pass


class BufferLengthMismatch(KiteError):
    pass


class SeriesTooShort(KiteError):
    pass


class RSViolation(KiteError):
    """Robust stability lost at a frequency (pole of the perturbed sensitivity)."""


class NoFeasibleGain(KiteError):
    pass


class NoFeasibleRate(KiteError):
    pass


class DimensionMismatch(KiteError, ValueError):
    pass


class SolverFailure(KiteError):
    pass


class WindowTooShort(KiteError):
    pass


class DegenerateData(KiteError):
    pass


class RunAborted(KiteError):
    def __init__(self, reason, t=None, detail=""):
        self.reason = reason
        self.t = t
        self.detail = detail
        msg = f"run aborted ({reason})"
        if t is not None:
            msg += f" at t={t:.2f}s"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
