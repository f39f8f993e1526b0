"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`KpcError`.
Data problems (bad input files, degenerate samples) derive from
:class:`DataError` so the command line can map them to exit code 2.
"""


class KpcError(Exception):
    """Base class for all package errors."""


class DataError(KpcError):
    """The input data cannot support the requested computation."""


class ConfigError(KpcError):
    """An option or combination of options is invalid."""


class MalformedCsv(DataError):
    pass


class InvalidRotation(DataError):
    pass


class EmptyData(DataError):
    pass


class ZeroVariance(DataError):
    pass


class IncompatibleMetric(ConfigError):
    pass


class TypeMismatch(ConfigError):
    pass


class DegenerateBandwidth(DataError):
    pass


class TooFewPoints(DataError):
    pass


class SizeMismatch(DataError):
    pass


class DegenerateDenominator(DataError):
    pass


class NonPsdGram(DataError):
    pass


class NegativeDiagonal(DataError):
    pass


class AsymmetricConfig(ConfigError):
    pass


class NotPositiveDefinite(DataError):
    pass


class DegenerateY(DataError):
    pass


class RankDeficient(DataError):
    pass


class UnknownColumn(ConfigError, KeyError):
    """A column name or index does not exist in the dataset."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""
