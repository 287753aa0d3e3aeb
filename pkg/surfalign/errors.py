"""
Exception hierarchy shared by every surfalign module.

Each error carries a short machine-readable ``code`` which the CLI prints on
failure.
"""


class SurfAlignError(Exception):
    """Base class for all errors raised by the toolkit."""

    code = "error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self):
        """
        Describe the error as a JSON-serialisable dict.

        Returns:
            dict: code, type and message (plus any details)
        """
        data = {"code": self.code, "type": type(self).__name__, "message": self.message}
        data.update({k: v for k, v in self.details.items() if v is not None})
        return data


class ArgumentError(SurfAlignError, ValueError):
    code = "argument"


class ConfigError(ArgumentError):
    code = "config"


class BoundsError(SurfAlignError, IndexError):
    code = "bounds"


class NumericError(SurfAlignError, ArithmeticError):
    code = "numeric"

    def __init__(self, message, layer=None, **details):
        super().__init__(message, layer=layer, **details)
        self.layer = layer


class UndefinedCorrelationError(NumericError):
    code = "undefined_correlation"


class StateError(SurfAlignError, RuntimeError):
    code = "state"


class ChecksumError(StateError):
    code = "checksum"


class ConfigHashMismatchError(StateError):
    code = "config_hash"
