"""Exception and warning types raised across the package."""


class InputError(ValueError):
    """Base class for invalid user-supplied data."""


class NonFinite(InputError):
    pass


class NegativeEntry(InputError):
    pass


class ZeroSum(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class LabelOutOfRange(InputError):
    pass


class BandwidthNonPositive(InputError):
    pass


class EmptyGrid(InputError):
    pass


class ParseError(InputError):
    """A row of an input file could not be parsed or validated."""

    def __init__(self, row, reason):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")


class EmptyRow(Exception):
    """A binning row has no co-binned neighbour once the diagonal is excluded."""

    def __init__(self, row):
        self.row = row
        super().__init__(f"no other point shares the bin of row {row}")


class GeneratorCheckError(ValueError):
    """A convex generator failed its convexity or gradient check."""


class InvariantViolation(RuntimeError):
    """An estimate broke a mathematical guarantee (e.g. a negative divergence)."""


class DegenerateLabelsWarning(UserWarning):
    """Only one class is present in the fitting data."""
