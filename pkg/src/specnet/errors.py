"""Exception hierarchy shared across the package."""


class SpecNetError(Exception):
    """Base class for all errors raised by specnet."""


class DimensionError(SpecNetError, ValueError):
    """Shapes do not satisfy an operation's size requirements."""


class StructuralError(SpecNetError, ValueError):
    """A sparse map or cache is internally inconsistent."""


class NumericIntegrityError(SpecNetError, ArithmeticError):
    """A numerical guarantee (e.g. conjugate symmetry) was violated."""


class DataError(SpecNetError):
    """Base class for dataset ingestion failures."""


class FormatError(DataError, ValueError):
    """File header or layout does not match the expected format."""


class LengthError(DataError, ValueError):
    """File payload is shorter or longer than its header declares."""


class ConsistencyError(DataError, ValueError):
    """Paired files disagree (e.g. image and label counts)."""


class LabelValueError(DataError, ValueError):
    """A label lies outside the valid class range."""


class UsageError(SpecNetError, ValueError):
    """Invalid user-supplied configuration or API usage."""
