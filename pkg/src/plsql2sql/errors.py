"""Exception hierarchy shared by all compilation stages and evaluators."""


class CompilerError(Exception):
    """Base class for every error this package raises on purpose."""


class SourceError(CompilerError):
    """An error anchored to a source position."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class ParseError(SourceError):
    """Malformed source text."""


class UnsupportedConstructError(SourceError):
    """Source uses a construct outside the supported language subset."""

    def __init__(self, construct: str, line: int | None = None, column: int | None = None):
        self.construct = construct
        super().__init__(f"unsupported construct: {construct}", line, column)


class UndeclaredVariableError(SourceError):
    """A body expression references a name that is neither a parameter,
    a declaration, nor an enclosing loop variable."""

    def __init__(self, name: str, line: int | None = None, column: int | None = None):
        self.name = name
        super().__init__(f"undeclared variable: {name}", line, column)


class TypeMismatchError(CompilerError):
    """A value does not fit the type its context requires.

    Mixed int/float arithmetic lands here as well: the language requires
    explicit CAST rather than guessing an implicit coercion.
    """


class IntegerOverflowError(CompilerError):
    """Checked 64-bit integer arithmetic left the representable range."""


class IterationLimitError(CompilerError):
    """An evaluator exceeded its configured loop-iteration budget."""


class OracleError(CompilerError):
    """The query oracle could not answer an embedded-query evaluation."""


class TableLoadError(CompilerError):
    """A CSV table file is malformed or violates a declared key."""


class UnsupportedCombinationError(CompilerError):
    """Requested an emission combination no target accepts (iterate + sqlite)."""


class DivergenceError(CompilerError):
    """Differential testing found stages disagreeing on a result."""
