"""Shared exception types.

Everything derives from ValueError so callers can catch broadly; the
distinct classes exist because tests and the CLI report them differently.
"""


class DimensionError(ValueError):
    """Operands have incompatible or unexpected shapes."""


class ContractError(ValueError):
    """An input violates a documented precondition (range, normalization)."""


class FormatError(ValueError):
    """A serialized artifact is malformed; message carries the byte offset
    or line number where parsing failed."""


class DegenerateBatchError(ValueError):
    """A batch-level reduction is undefined, e.g. a class column with zero
    total mass."""


class ContradictionError(ValueError):
    """Beliefs and predictions place no joint mass anywhere, so the implied
    posterior is undefined."""


class ValidationError(ValueError):
    """Loaded data fails a semantic check (e.g., priors off the simplex);
    the message lists the offending rows."""
