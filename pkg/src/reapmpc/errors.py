"""Exception hierarchy with stable process exit codes.

Every failure the command line can report maps to one exception class, and
each class carries the exit code ``main`` returns for it.
"""

# Diagnostic texts printed by ``check``. They are kept byte-exact because
# downstream tooling greps for them.
MSG_UNCONTROLLABLE = (
    "The pair (A,B) is not controllable. "
    "REAP-T cannot proceed with the specified system."
)
MSG_REGION_OF_ATTRACTION = (
    "The specified initial condition does not belong to the region of "
    "attraction. REAP-T cannot proceed."
)
MSG_UNOBSERVABLE = (
    "The pair (C, A) is not observable. Please use the Lyapunov-based "
    "method to implement the terminal constraint set."
)
MSG_HORIZON = (
    "The specified prediction horizon length is insufficient for "
    "implementing the Lyapunov-based method. Please increase the "
    "prediction horizon length."
)
MSG_OMEGA_CAP = (
    "Algorithm for the index omega* reached phi = 100 without terminating: "
    "prediction-based method may not be suitable; use Lyapunov-based."
)


class ReapError(Exception):
    """Base class. ``exit_code`` is what the CLI returns."""

    exit_code = 1


class ConfigurationError(ReapError):
    """Malformed input: bad dimensions, missing fields, invalid values."""

    exit_code = 64


class ControllabilityError(ReapError):
    exit_code = 2

    def __init__(self, msg=MSG_UNCONTROLLABLE):
        super().__init__(msg)


class TargetError(ReapError):
    """Reference or equilibrium cannot be turned into an admissible target."""

    exit_code = 3


class ObservabilityError(ReapError):
    exit_code = 4

    def __init__(self, msg=MSG_UNOBSERVABLE):
        super().__init__(msg)


class HorizonError(ReapError):
    exit_code = 5

    def __init__(self, msg=MSG_HORIZON):
        super().__init__(msg)


class RegionOfAttractionError(ReapError):
    exit_code = 6

    def __init__(self, msg=MSG_REGION_OF_ATTRACTION):
        super().__init__(msg)


class NumericalError(ReapError):
    """A numerical routine failed (no convergence, singular system, ...)."""

    exit_code = 7


class OmegaCapError(NumericalError):
    def __init__(self, msg=MSG_OMEGA_CAP):
        super().__init__(msg)


class BarrierDomainError(NumericalError):
    def __init__(self, msg="barrier domain violated"):
        super().__init__(msg)


class FeasibilityBreach(NumericalError):
    """Closed-loop safety net: a recorded state or input left its box."""
