"""Exception hierarchy shared by every subpackage.

The CLI maps these onto exit codes: :class:`DataError` and
:class:`ConfigError` (and their subclasses) exit with 2,
:class:`TrainingAbort` exits with 3.
"""


class SimmcError(Exception):
    """Base class for all package errors."""


class ShapeError(SimmcError, ValueError):
    pass


class LengthError(ShapeError):
    pass


class DegenerateInputError(SimmcError, ValueError):
    pass


class ContractError(SimmcError, ValueError):
    pass


class ConfigError(SimmcError, ValueError):
    pass


class CapabilityError(ConfigError):
    """A model is asked for a head or variant it was not built with."""


class DataError(SimmcError, ValueError):
    pass


class LabelError(DataError):
    pass


class ParseError(DataError):
    pass


class IntegrityError(DataError):
    pass


class CompatError(DataError):
    pass


class SamplingError(DataError):
    pass


class EvaluationError(DataError):
    pass


class ObjectLookupError(DataError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class TrainingAbort(SimmcError, RuntimeError):
    pass


class NonFiniteError(TrainingAbort, FloatingPointError):
    pass
