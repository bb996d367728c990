"""Exception hierarchy shared across the package."""


class RiemobsError(Exception):
    """Base class for all package errors."""


class DomainError(RiemobsError):
    """A point lies outside the declared working domain."""


class DomainExit(RiemobsError):
    """A trajectory left the working domain before the requested end time.

    Carries the partial trajectory (when available) in ``segment``.
    """

    def __init__(self, message, segment=None, exit_time=None):
        super().__init__(message)
        self.segment = segment
        self.exit_time = exit_time


class StepFailure(RiemobsError):
    """The adaptive integrator could not meet the requested tolerance."""


class IntegrationFailure(RiemobsError):
    """A coordinate-construction ODE could not be integrated."""


class SingularMetric(RiemobsError):
    """Metric evaluation is not positive definite / not invertible."""


class SingularJacobian(RiemobsError):
    """A coordinate-change Jacobian is not invertible."""


class PartialsUnavailable(RiemobsError):
    """Metric partial derivatives cannot be produced at this point."""


class ShootingDiverged(RiemobsError):
    """Geodesic shooting failed to converge (best effort is still returned)."""


class NotConverged(RiemobsError):
    """Adaptive horizon doubling hit its cap before converging."""


class BlowUp(RiemobsError):
    """A matrix ODE solution exceeded the norm guard."""


class SingularBeta(RiemobsError):
    """The beta factor of the coupled linear pair is not invertible."""


class OriginSingularity(RiemobsError):
    """Scaled lookup requested at a point where the radius vanishes."""


class GridOutOfRange(RiemobsError):
    """Lookup point maps outside the stored grid axes."""


class LieOutputsMissing(RiemobsError):
    """The system does not provide Lie-derivative outputs of the needed order."""


class ImmersionDegenerate(RiemobsError):
    """Sampled lower bound on the immersion Jacobian Gram matrix is not positive."""


class Infeasible(RiemobsError):
    """No feasible certificate / rate pair found within search bounds."""


class NuMismatch(RiemobsError):
    """Certificate Lipschitz parameter exceeds the sampled estimate."""


class WeightsInvalid(RiemobsError):
    """Tangent-bundle metric weights violate c^2 < a*b."""


class RankDeficient(RiemobsError):
    """Output differential has zero rank where rank one is required."""


class SingularPi(RiemobsError):
    """Online Riccati state lost positive definiteness."""


class SingularGrammian(RiemobsError):
    """Finite-horizon Grammian is not invertible at the requested point."""


class EmptyKernel(RiemobsError):
    """Output differential kernel is trivial (p >= n)."""


class ConfigError(RiemobsError):
    """Invalid configuration or command-line arguments."""
