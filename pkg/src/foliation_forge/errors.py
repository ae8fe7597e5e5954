"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: validation problems exit with 2,
solver failures with 3 and resonance skips with 4.
"""


class ForgeError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 3

    def __init__(self, message, **payload):
        super().__init__(message)
        self.payload = payload

    def to_dict(self):
        return {"type": type(self).__name__, "message": str(self), **self.payload}


class ValidationError(ForgeError, ValueError):
    exit_code = 2


class SingularMetricError(ValidationError):
    """A metric-role tensor is not positive definite somewhere on the grid."""


class CollarError(ValidationError):
    """Requested x lies outside the collar or h(x) lost positivity."""


class BranchError(ForgeError):
    """Discriminant of the Hamilton-Jacobi quadratic became non-positive."""


class CharacteristicCrossingError(ForgeError):
    """The characteristic fan folded over (Jacobian lost invertibility)."""


class LevelSetError(ForgeError):
    """No root of x*exp(phi) = eps inside the ladder."""


class ConvergenceError(ForgeError):
    """An iterative solver did not reach its tolerance."""


class StepSizeError(ForgeError):
    """Finite-difference derivatives disagree between two step sizes."""


class DegenerateProblemError(ForgeError):
    """The linearization is degenerate in a way the method cannot handle."""


class ResonanceError(ForgeError):
    """Leaf requested at a parameter value where L_eps is (nearly) singular."""

    exit_code = 4


class BlowUpError(ForgeError):
    """Spectral coefficients stopped decaying during an iteration."""


class FoliationOverlapError(ForgeError):
    """Two leaves of a foliation intersect."""
