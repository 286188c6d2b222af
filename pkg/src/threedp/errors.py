"""Exception types shared across modules."""


class SingularOrientation(ValueError):
    """Rotation lies in the excised neighbourhood of the Hopf singular set."""


class InvalidFace(ValueError):
    pass


class EmptyShape(ValueError):
    pass


class DimMismatch(ValueError):
    pass


class InvalidGraft(ValueError):
    pass


class OutOfSupport(ValueError):
    pass


class DegenerateCorrespondences(RuntimeError):
    pass


class NoHypotheses(RuntimeError):
    pass


class InconsistentObservation(ValueError):
    pass


class WeightMismatch(ValueError):
    pass


class EmptyModel(ValueError):
    pass


class PlacementFailure(RuntimeError):
    pass
