"""Exception and warning hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented exit statuses (2 for data problems, 3 for numerical ones).
"""


class SparseVarError(Exception):
    exit_code = 2


class DataError(SparseVarError, ValueError):
    exit_code = 2


class NumericalError(SparseVarError, ArithmeticError):
    exit_code = 3


# data / shape problems
class InvalidLength(DataError):
    pass


class InvalidLag(DataError):
    pass


class InvalidSpec(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class InsufficientData(DataError):
    pass


class TooShort(DataError):
    pass


class EmptySample(DataError):
    pass


class EmptyBand(DataError):
    pass


class DegenerateLabels(DataError):
    pass


class InsufficientReplicates(DataError):
    pass


class MissingTruth(DataError):
    pass


class MissingLabel(DataError):
    pass


class InconsistentShape(DataError):
    pass


class ConfigError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class IoError(SparseVarError, OSError):
    exit_code = 2


# numerical problems
class NonStationaryModel(NumericalError):
    pass


class SingularDesign(NumericalError):
    pass


class SingularSigma(NumericalError):
    pass


class SingularTransfer(NumericalError):
    pass


class SingularSpectrum(NumericalError):
    pass


class ZeroAutoSpectrum(NumericalError):
    pass


class ZeroColumn(NumericalError):
    pass


class ZeroVariance(NumericalError):
    pass


class NumericalBreakdown(NumericalError):
    pass


class NoConvergence(RuntimeWarning):
    """Coordinate descent hit ``max_iter``; the last iterate is still returned."""


class SingularDesignWarning(RuntimeWarning):
    """Restricted refit fell back to a minimum-norm solution."""
