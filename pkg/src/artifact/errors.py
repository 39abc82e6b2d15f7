"""Exception types raised across the package."""


class ArtifactError(Exception):
    """Base class for all package errors."""


class AngleNearPi(ArtifactError):
    """Rotation angle too close to pi for a well-conditioned logarithm."""


class DimensionMismatch(ArtifactError):
    pass


class CycleDetected(ArtifactError):
    pass


class NonTopologicalOrder(ArtifactError):
    pass


class BadAttachment(ArtifactError):
    pass


class RootHasNoRelativePose(ArtifactError):
    pass


class RootHasNoConstraint(ArtifactError):
    pass


class BehindCamera(ArtifactError):
    pass


class DegenerateBone(ArtifactError):
    pass


class SingularSystem(ArtifactError):
    def __init__(self, message, smallest_pivot=None):
        super().__init__(message)
        self.smallest_pivot = smallest_pivot


class IndefiniteQ22(ArtifactError):
    def __init__(self, node):
        super().__init__(f"joint block not positive definite at node {node}")
        self.node = node


class SingularRoot(ArtifactError):
    pass


class NonFiniteObjective(ArtifactError):
    pass
