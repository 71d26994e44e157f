"""Exception hierarchy shared by every module."""


class ArtifactError(Exception):
    pass


class ShapeMismatch(ArtifactError, ValueError):
    pass


class DivisibilityError(ArtifactError, ValueError):
    pass


class KernelTooLarge(ArtifactError, ValueError):
    pass


class EvenKernel(ArtifactError, ValueError):
    pass


class NotScalar(ArtifactError, ValueError):
    pass


class DetachedNode(ArtifactError, ValueError):
    pass


class NegativeEpsilon(ArtifactError, ValueError):
    pass


class InstanceTooLarge(ArtifactError, ValueError):
    pass


class LengthMismatch(ArtifactError, ValueError):
    pass


class EmptyClass(ArtifactError, ValueError):
    pass


class InvalidBudget(ArtifactError, ValueError):
    pass


class NonPositiveBandwidth(ArtifactError, ValueError):
    pass


class RowCountMismatch(ArtifactError, ValueError):
    pass


class DegenerateInput(ArtifactError, ValueError):
    pass


class MissingLabelEntry(ArtifactError, KeyError):
    pass


class EmptyCloud(ArtifactError, ValueError):
    pass


class ClipTooShort(ArtifactError, ValueError):
    pass


class TooFewPoints(ArtifactError, ValueError):
    pass


class UnknownPlacement(ArtifactError, ValueError):
    pass


class NonFiniteLoss(ArtifactError, FloatingPointError):
    pass


class EmptyDataset(ArtifactError, ValueError):
    pass


class TooManyClasses(ArtifactError, ValueError):
    pass


class TooFewFrames(ArtifactError, ValueError):
    pass


class FormatError(ArtifactError, ValueError):
    """Malformed or truncated binary container."""


class ConfigError(ArtifactError, ValueError):
    pass


class NonConvergenceWarning(UserWarning):
    """Sinkhorn hit max_iter with marginal violation above tol."""
