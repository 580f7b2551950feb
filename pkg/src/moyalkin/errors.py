"""Exception hierarchy shared by all modules."""


class MoyalKinError(Exception):
    """Base class for every error raised by the package."""


class TruncationTooSmall(MoyalKinError):
    pass


class QuadratureFailure(MoyalKinError):
    pass


class DomainError(MoyalKinError):
    pass


class UnstableStep(MoyalKinError):
    pass


class StepTooLarge(MoyalKinError):
    pass


class NonDiagonalHamiltonian(MoyalKinError):
    pass


class DegenerateNullSpace(MoyalKinError):
    pass


class NoPSDNullVector(MoyalKinError):
    pass


class SingularReference(MoyalKinError):
    pass


class GridUnderResolved(MoyalKinError):
    pass


class KernelDivergence(MoyalKinError):
    pass


class NonQuadraticKernel(MoyalKinError):
    pass


class MissingBathQuantity(MoyalKinError):
    pass


class CFLViolation(MoyalKinError):
    pass


class BoundaryLeak(MoyalKinError):
    pass


class NonHurwitzDrift(MoyalKinError):
    pass


class ConfigError(MoyalKinError):
    pass
