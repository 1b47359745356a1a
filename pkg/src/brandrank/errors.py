"""Exception types raised across the package.

All of them subclass ``ValueError`` so callers that only care about "bad
input" can catch that; the CLI maps them to exit status 2.
"""


class BrandRankError(ValueError):
    """Base class for every error raised deliberately by this package."""


class NumericDomainError(BrandRankError):
    """A non-finite value reached a kernel that requires finite input."""


class ContractError(BrandRankError):
    """A precondition on shapes, ordering or cached state was violated."""


class DataError(BrandRankError):
    """Input records are malformed or semantically invalid."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VocabularyError(DataError):
    """A brand id is missing from the brand vocabulary."""


class DegenerateCategoryError(DataError):
    """A category has too few items to define seven price levels."""


class EmptyDatasetError(DataError):
    pass


class SamplingError(DataError):
    pass


class UndefinedMetricError(BrandRankError):
    """A metric was requested on input for which it is not defined."""


class CheckpointError(BrandRankError):
    """A checkpoint file is truncated, corrupted or of the wrong version."""
