"""Exception types shared across the toolkit."""


class KontextError(Exception):
    """Base class for all domain errors raised by this package."""


class SizeLimit(KontextError):
    """An enumeration or search exceeded its configured budget."""


class Exhausted(KontextError):
    """Rejection sampling gave up before hitting the requested target."""


class ParseError(KontextError):
    """A corpus or model file could not be parsed.

    Carries the 1-based line number when one is known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownToken(ParseError):
    """A token outside the supplied alphabet was encountered."""


class EmptyModel(KontextError):
    """No context survived windowing/filtering."""


class DimensionMismatch(KontextError):
    """Sequence lengths or tensor shapes do not line up."""


class DegenerateInit(KontextError):
    """An initial probability table contains an all-zero row."""


class Diverged(KontextError):
    """Training produced a non-finite objective."""


class ZeroPrefix(KontextError):
    """A conditioning prefix has (numerically) zero probability."""


class CertificateUnroutable(KontextError):
    """A partition certificate cannot be realized by input-prefix routing."""


class SchemaError(KontextError):
    """A CSV/JSON input is missing a required column or field."""
