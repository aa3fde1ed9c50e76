"""Exception hierarchy shared by all modules."""


class STDGMRFError(Exception):
    """Base class for all package errors."""


class InvalidLattice(STDGMRFError, ValueError):
    pass


class InvalidEdge(STDGMRFError, ValueError):
    pass


class UnsupportedGraph(STDGMRFError, ValueError):
    pass


class SingularLayer(STDGMRFError, ArithmeticError):
    pass


class InvalidObservation(STDGMRFError, ValueError):
    pass


class InvalidInput(STDGMRFError, ValueError):
    pass


class InvalidMask(STDGMRFError, ValueError):
    pass


class Undefined(STDGMRFError, ArithmeticError):
    """A statistic is mathematically undefined for the given input."""


class SolverDiverged(STDGMRFError, ArithmeticError):
    pass


class TrainingDiverged(STDGMRFError, ArithmeticError):
    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite ELBO at iteration {iteration}")


class NumericalFailure(STDGMRFError, ArithmeticError):
    pass


class TooLarge(STDGMRFError, MemoryError):
    pass
