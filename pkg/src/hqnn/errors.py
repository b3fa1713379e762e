"""Exception types shared across the package."""


class HQNNError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(HQNNError, ValueError):
    """Invalid configuration, out-of-range sizes or infeasible requests."""


class ShapeError(HQNNError, ValueError):
    """Array shapes that do not agree with a layer or circuit layout."""


class WireError(HQNNError, IndexError):
    """Qubit wire index outside the register."""


class UnsupportedGateError(HQNNError, TypeError):
    """A gate that the requested gradient engine cannot differentiate."""


class FormatError(HQNNError, ValueError):
    """Malformed binary or text container (IDX files, checkpoints)."""


class DegenerateBatchError(HQNNError, ValueError):
    """Batch statistics requested on a batch that is too small."""


class TrainingAborted(HQNNError, RuntimeError):
    """Training stopped because of a non-finite loss or gradient."""
