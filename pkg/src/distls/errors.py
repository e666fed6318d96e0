"""Exception hierarchy shared by all modules."""


class DistLSError(Exception):
    pass


class DimensionMismatch(DistLSError, ValueError):
    pass


class TopologyError(DistLSError, ValueError):
    """Invalid weighted adjacency matrix; ``index`` names the offending entry."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NotSymmetric(TopologyError):
    pass


class NotStochastic(TopologyError):
    pass


class NegativeEntry(TopologyError):
    pass


class Disconnected(TopologyError):
    pass


class IndexOutOfRange(DistLSError, IndexError):
    pass


class NumericalError(DistLSError, ArithmeticError):
    """Any failure inside an estimator or matrix routine (CLI exit code 3)."""


class NonFiniteInput(NumericalError):
    pass


class WeightSumInvalid(NumericalError):
    pass


class SingularCombinedInformation(NumericalError):
    pass


class SingularNormalEquations(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class SingularInput(NumericalError):
    pass


class AnalysisError(DistLSError):
    pass


class EmptyRecords(AnalysisError):
    pass


class IncompleteHistory(AnalysisError):
    pass


class MissingVarianceBound(AnalysisError):
    pass


class ConfigError(DistLSError):
    """Config problems (CLI exit code 2)."""


class ParseError(ConfigError):
    pass


class CrossFieldMismatch(ConfigError):
    def __init__(self, field_a, field_b, detail):
        super().__init__(f"{field_a} and {field_b} disagree: {detail}")
        self.fields = (field_a, field_b)


class ConfigInvalid(ConfigError):
    pass


class IoFailure(DistLSError, OSError):
    pass


class MissingMetrics(DistLSError):
    pass
