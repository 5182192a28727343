"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: config/data problems exit 2,
numeric/runtime problems exit 3.
"""


class MmasrError(Exception):
    pass


class ShapeError(MmasrError):
    """Operand shapes do not conform."""


class NumericError(MmasrError):
    """Non-finite values where finite ones are required."""


class ContractError(MmasrError):
    """A caller violated an operation's contract."""


class ConfigError(MmasrError):
    """Invalid configuration value or unknown config key."""


class VocabError(MmasrError):
    """Token id outside the configured vocabulary."""


class FeasibilityError(MmasrError):
    """CTC target cannot be aligned to the given number of frames."""


class OracleSizeError(MmasrError):
    """Brute-force oracle invoked beyond its enumeration bounds."""


class CorpusFormatError(MmasrError):
    """Malformed corpus file; carries the offending record index."""

    def __init__(self, message, record=None):
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


class CheckpointError(MmasrError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class RecipeError(MmasrError):
    """Training-recipe misuse (e.g. fusion stage without a stage-1 checkpoint)."""
