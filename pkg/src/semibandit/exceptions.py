"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid experiment or algorithm configuration."""


class LetorParseError(ValueError):
    """Malformed line in a LETOR-style ranking file.

    ``column`` is the 1-based character offset of the offending token;
    ``lineno`` is filled in when reading from a file.
    """

    def __init__(self, message, column, line=None):
        self.column = column
        self.line = line
        self.lineno = None
        super().__init__(f"column {column}: {message}")

    def __str__(self):
        text = super().__str__()
        return text if self.lineno is None else f"line {self.lineno}, {text}"


class OracleError(RuntimeError):
    """The argmax oracle returned something unusable."""


class SolverStallError(RuntimeError):
    """Coordinate ascent exceeded its iteration cap.

    ``diagnostics`` holds the iteration count, the cap and the last step kinds.
    """

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
