"""Exception hierarchy shared by every stage of the pipeline.

Each error class carries an ``exit_code`` so the command line front end can
map failures onto process status without a lookup table.
"""


class TrendRulError(Exception):
    exit_code = 1


class ConfigError(TrendRulError):
    exit_code = 2


class PipelineOrderError(TrendRulError):
    exit_code = 3


class NumericalError(TrendRulError):
    exit_code = 4


# timeseries
class SensorDegenerate(NumericalError):
    pass


class InvalidWindow(ConfigError):
    pass


# emd / ensemble
class EnvelopeUnderdetermined(NumericalError):
    pass


class NotDecomposable(NumericalError):
    pass


class LevelOutOfRange(ConfigError):
    pass


# cmapss
class ParseError(ConfigError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class RulFileMismatch(ConfigError):
    pass


class EmptySensorSet(ConfigError):
    pass


class RoleError(ConfigError):
    pass


class PadTooShort(ConfigError):
    pass


# neural / metrics
class ShapeError(TrendRulError):
    exit_code = 2


class MaskError(ShapeError):
    pass


class InvalidProbability(ConfigError):
    pass


class EmptyLoss(NumericalError):
    pass


class CacheMismatch(TrendRulError):
    pass


class GradientBlowup(NumericalError):
    pass


class EmptyInput(ShapeError):
    pass


class CoverageError(ShapeError):
    pass


class InvalidSigma(NumericalError):
    pass
