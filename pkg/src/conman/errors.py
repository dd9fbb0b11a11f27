"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ParseError (and subclasses) means the
input could not even be read as a document (exit 2); ValidationError (and
subclasses) means the document parsed but violates semantic rules (exit 1).
"""

from __future__ import annotations


class ConmanError(Exception):
    """Base class for every error raised by this package."""


class ParseError(ConmanError):
    """Input is not a syntactically valid document."""


class SchemaError(ParseError):
    """Document is valid JSON but has unknown keys, wrong types, or bad enum values."""


class ValidationError(ConmanError):
    """Parsed document failed semantic validation.

    ``violations`` holds one human-readable message per problem.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnknownReference(ValidationError):
    """Scenario refers to a host or interface that does not exist."""


class EventOrderError(ValidationError):
    """Scenario events are not sorted by time."""


class InvalidTuple(ConmanError):
    """Context tuple violates its structural invariants."""


class TimeRegression(ConmanError):
    """Write would move a context key backwards in time."""


class InvalidInterval(ConmanError):
    """Poll subscription interval must be positive."""


class UnknownHost(ConmanError):
    """No interfaces registered for the requested host."""


class MissingContext(ConmanError):
    """A requirement predicate needs end-to-end data that was not provided."""


class MissingReading(ConmanError):
    """A weight factor has no reading to evaluate."""


class ShapeError(ConmanError):
    """Cost structure cannot be built: end-to-end factors without remote data."""


class ShapeMismatch(ConmanError):
    """The two cost matrices do not have transposed-compatible shapes."""


class UnknownTechPair(ConmanError):
    """Switch-delay table has no entry for a technology crossing and defaults are disabled."""


class IllegalTransition(ConmanError):
    """Channel state machine does not allow this action in the current state."""
