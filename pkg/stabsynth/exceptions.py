"""Exception hierarchy shared by the library and the CLI.

Every error carries the process exit code the CLI reports for it:
2 for configuration problems, 3 for algorithm failures that re-tuning can
fix, 4 for broken internal invariants.
"""

from typing import Optional


class StabSynthError(Exception):
    """Base class for all stab-synth errors."""

    exit_code: int = 1


class ConfigError(StabSynthError):
    """Configuration text could not be parsed or validated."""

    exit_code = 2


class DimensionError(StabSynthError, ValueError):
    """Matrix dimensions are inconsistent."""

    exit_code = 2


class SymmetryError(StabSynthError, ValueError):
    """A matrix expected to be symmetric is not, beyond tolerance."""

    exit_code = 2


class AlgorithmError(StabSynthError):
    """Numerical failure inside an algorithm."""

    exit_code = 3


class EigenSolverError(AlgorithmError):
    """The symmetric eigen-solver did not converge."""


class SingularGenerator(AlgorithmError):
    """The Kronecker-form Lyapunov operator is numerically singular."""


class NonPositiveSolution(AlgorithmError):
    """A Lyapunov solution with positive definite right-hand side is not PD."""


class SingularInnerMatrix(AlgorithmError):
    """R + D'PD (or R + H) cannot be inverted."""


class NotStabilizing(AlgorithmError):
    """A gain required to be a mean-square stabilizer is not one."""


class MaxItersExceeded(AlgorithmError):
    """An iteration hit its configured cap without converging."""


class NonConvergence(AlgorithmError):
    """Successive value iterates stagnate above the stopping tolerance."""

    def __init__(self, message: str, noise_floor: Optional[float] = None):
        super().__init__(message)
        self.noise_floor = noise_floor


class RankDeficient(AlgorithmError):
    """The data matrix Phi lacks full column rank."""

    def __init__(self, message: str, sigma_min: float = 0.0, sigma_max: float = 0.0):
        super().__init__(message)
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max


class Blowup(AlgorithmError):
    """A simulated state exceeded the overflow guard."""


class NonPositiveCost(AlgorithmError):
    """A cost value that must be strictly positive is not."""


class InvalidInitialAlpha(AlgorithmError):
    """The zero gain does not stabilize the system shifted by alpha0."""


class DegenerateMoment(AlgorithmError):
    """The estimated initial-state second moment is not positive definite."""


class VerificationError(StabSynthError):
    """A guaranteed property failed at runtime. Indicates a bug."""

    exit_code = 4
