"""Exception hierarchy shared by all dshash modules."""


class DSHError(Exception):
    """Base class for every error raised by this package."""


class InvalidDataError(DSHError, ValueError):
    """Input data is malformed (non-finite values, bad labels, parse errors)."""


class InvalidArgumentError(DSHError, ValueError):
    """An argument is out of range or dimensionally inconsistent."""


class DegenerateKernelError(DSHError, ValueError):
    """The kernel width cannot be estimated (all samples coincide)."""


class SingularSystemError(DSHError, ArithmeticError):
    """A closed-form update hit a system that is not positive definite."""


class ModelFormatError(DSHError, ValueError):
    """A serialized model or dataset file is corrupt or of the wrong version."""
