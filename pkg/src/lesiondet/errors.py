"""Exception types shared across the toolkit."""


class DimensionMismatchError(ValueError):
    """Operands disagree on a required dimension (channel counts, lengths, shapes)."""


class DomainError(ValueError):
    """A numeric argument lies outside its documented domain."""


class SchemaError(ValueError):
    """An input file or record fails structural validation."""
