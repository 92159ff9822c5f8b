"""Exception types shared across the package."""


class MixedFemError(Exception):
    """Base class for all package errors."""


class NoConvergence(MixedFemError):
    def __init__(self, where: str, iterations: int, residual: float):
        super().__init__(f"{where}: no convergence after {iterations} iterations (residual {residual:.3e})")
        self.where = where
        self.iterations = iterations
        self.residual = residual


class PerfectPlasticityUnsupported(MixedFemError):
    pass


class DegenerateElement(MixedFemError):
    pass


class RankDeficientFilter(MixedFemError):
    pass


class SingularG(MixedFemError):
    pass


class SingularEnhancedStiffness(MixedFemError):
    pass


class SingularCV(MixedFemError):
    pass


class CollinearNodes(MixedFemError):
    pass


class ActiveSetCycling(MixedFemError):
    def __init__(self, sets):
        super().__init__(f"active set cycling between {sets}")
        self.sets = sets


class ElementFailure(MixedFemError):
    """Wraps an element-level error with the offending element index."""

    def __init__(self, element: int, cause: Exception):
        super().__init__(f"element {element}: {cause}")
        self.element = element
        self.cause = cause


class GlobalNoConvergence(MixedFemError):
    def __init__(self, increment: int, residual_log):
        super().__init__(f"increment {increment}: global Newton failed, residuals {residual_log}")
        self.increment = increment
        self.residual_log = residual_log


class EigensolverFailure(MixedFemError):
    pass


class MissingRun(MixedFemError):
    pass


class ConfigError(MixedFemError):
    pass
