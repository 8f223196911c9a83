"""Exception types shared across the package.

Every domain failure raises a subclass of :class:`MedgraphError` so callers
(and the CLI) can distinguish domain errors (exit 1) from usage errors
(exit 2) and genuine bugs.
"""


class MedgraphError(Exception):
    """Base class for all domain errors raised by this package."""


# --- graph / schema -------------------------------------------------------

class UnknownKind(MedgraphError):
    pass


class IllegalAttribute(MedgraphError):
    """An attribute is undeclared or its value is outside the declared
    vocabulary/range.  The message always names the offending attribute."""

    def __init__(self, kind: str, attr: str, reason: str):
        self.kind = kind
        self.attr = attr
        super().__init__(f"illegal attribute {attr!r} for kind {kind!r}: {reason}")


class MissingNode(MedgraphError):
    pass


class IllegalRelation(MedgraphError):
    pass


class ParseError(MedgraphError):
    """Record file could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {reason}")


class SchemaViolation(MedgraphError):
    pass


# --- synthesis ------------------------------------------------------------

class InfeasibleConfig(MedgraphError):
    """The corpus configuration cannot produce a clean graph."""


# --- encoder / trainer ----------------------------------------------------

class DimensionMismatch(MedgraphError):
    pass


class DivergedLoss(MedgraphError):
    """Training hit a non-finite loss.  Carries the history so far."""

    def __init__(self, message: str, history=None):
        self.history = history
        super().__init__(message)


# --- clause DSL / logic ---------------------------------------------------

class ClauseSyntaxError(MedgraphError):
    """Clause text failed to parse; carries position and expectation."""

    def __init__(self, position: int, expected: str, found: str = ""):
        self.position = position
        self.expected = expected
        self.found = found
        detail = f" (found {found!r})" if found else ""
        super().__init__(f"at position {position}: expected {expected}{detail}")


class UnknownSymbol(MedgraphError):
    pass


class UncoveredAttribute(MedgraphError):
    """A relaxation does not cover an attribute the clause references."""


# --- mdl / scoring --------------------------------------------------------

class EmptyInput(MedgraphError):
    pass


class MissingLabel(MedgraphError):
    pass


# --- healing --------------------------------------------------------------

class NoRepairFound(MedgraphError):
    pass


class StaleCandidate(MedgraphError):
    """The graph changed since the repair candidate was proposed."""


class IllegalEdit(MedgraphError):
    pass


# --- review service -------------------------------------------------------

class ServiceNotReady(MedgraphError):
    pass


class AlreadyResolved(MedgraphError):
    pass


class UnknownItem(MedgraphError):
    pass
