"""Exception types raised across the package."""


class DegenerateGeometryError(ValueError):
    """The end-effector y-axis does not cross the needle plane at a usable point."""


class InfeasibleStateError(ValueError):
    """A grasp state lies outside the feasible hyperrectangle."""


class BehindCameraError(ValueError):
    """A point has nonpositive depth in the camera frame."""


class ConfigError(ValueError):
    """Invalid or unparseable configuration."""


class InsufficientSamplesError(RuntimeError):
    """Rejection sampling ran out of attempts before collecting enough samples.

    The partially collected set and the acceptance rate are attached so callers
    can decide whether to continue with fewer samples.
    """

    def __init__(self, message, partial, acceptance_rate):
        super().__init__(message)
        self.partial = partial
        self.acceptance_rate = acceptance_rate
