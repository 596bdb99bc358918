"""Exception types shared across the toolkit."""


class InvalidInputError(ValueError):
    """An input value violates a precondition (non-finite, non-unit, mismatched)."""


class InvalidArgumentError(ValueError):
    """A parameter is out of its legal range (e.g. k outside 1..n-1)."""


class InvalidBatchError(ValueError):
    """A batch is too small or inconsistently paired."""


class SingularSystemError(ArithmeticError):
    """A symmetric factorization failed even after regularization."""


class DegenerateFitError(ArithmeticError):
    """The affine fit is ill-posed: the weight normalizer vanished."""


class DegenerateDescriptorError(ArithmeticError):
    """A pre-normalization descriptor row has zero or non-finite norm."""


class DatasetFormatError(ValueError):
    """A dataset or checkpoint file is malformed; message names the offset."""
