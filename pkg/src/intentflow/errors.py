"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: DataError -> 2,
NumericalError -> 3, anything argparse-level -> 1.
"""


class IntentFlowError(Exception):
    """Base class for all package errors."""


class DataError(IntentFlowError):
    """Malformed or inconsistent input data (records, files, lookups)."""


class UnknownIntentError(DataError):
    """Intent name not present in the closed taxonomy."""


class DegenerateWindowError(DataError):
    """Kinematic window too short to classify (< 2 frames)."""


class MissingMetaActionError(DataError):
    """Record-level validation requires a meta-action that is absent."""


class InvalidIntentError(DataError):
    """Operation requires a driving class but got the unconditional slot."""


class OutOfOrderClipError(DataError):
    """Streaming received a clip whose index does not follow its predecessor."""


class ShapeMismatchError(IntentFlowError):
    """Array arguments disagree with the configured shapes."""


class NoRecordedForwardError(IntentFlowError):
    """backward() called without a cached forward pass."""


class NumericalError(IntentFlowError):
    """Non-finite loss or velocity encountered; carries diagnostics."""


class CheckpointError(IntentFlowError):
    """Corrupt checkpoint file or config/shape disagreement on load."""


class FrozenViolationError(IntentFlowError):
    """A parameter that was declared frozen changed during distillation."""
