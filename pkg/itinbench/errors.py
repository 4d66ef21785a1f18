"""Exception hierarchy shared across the pipeline."""


class ItinBenchError(Exception):
    """Base exception for all pipeline errors."""

    pass


class InvalidInputError(ItinBenchError):
    """An argument violates its documented preconditions."""

    pass


class UndefinedMetricError(ItinBenchError):
    """A metric has no defined value for the given inputs (e.g. zero denominators)."""

    pass


class EmptyBatchError(UndefinedMetricError):
    """A metric was requested over an empty batch."""

    pass
