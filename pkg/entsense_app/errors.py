class EntsenseError(Exception):
    """Base for every error raised by the toolkit."""


class ConfigError(EntsenseError, ValueError):
    pass


class InvalidInput(EntsenseError, ValueError):
    pass


class InvalidParams(InvalidInput):
    pass


class EmptyInput(InvalidInput):
    pass


class NonHermitianInput(InvalidInput):
    pass


class NonUniformGrid(InvalidInput):
    pass


class IndexOutOfRange(EntsenseError, IndexError):
    pass


class DegenerateGeometry(EntsenseError, ValueError):
    """Two spins closer than the minimum separation."""


class FitDiverged(EntsenseError):
    pass


class InsufficientData(EntsenseError):
    pass


class NoConvergence(EntsenseError):
    pass


def error_payload(exc: Exception) -> dict:
    return {"error": type(exc).__name__, "message": str(exc)}
