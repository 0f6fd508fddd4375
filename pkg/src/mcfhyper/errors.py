"""Exception types shared across the package."""


class RangeError(ValueError):
    """A numeric parameter lies outside its admissible interval."""


class ZeroState(ValueError):
    """A state with zero norm cannot be normalized."""


class BasisError(ValueError):
    """Two objects do not live on compatible label sets."""


class UnitarityError(ValueError):
    """A supposedly unitary matrix failed the U^dagger U = I check."""


class LayoutError(KeyError):
    """A core identifier is not part of the fiber layout."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown core"


class FitError(RuntimeError):
    """A fit failed to converge or produced an unusable result."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InsufficientCounts(ValueError):
    """Not enough counts to form an estimate."""


class ConfigError(ValueError):
    """Invalid run configuration; carries the offending file line when known."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where = f"{where}{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")
        self.line = line
        self.path = path
