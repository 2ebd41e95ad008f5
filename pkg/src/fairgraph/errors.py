"""Typed errors shared across the package.

The CLI maps these onto exit codes: configuration/usage problems exit 2,
numerical or verification failures exit 1.
"""


class FairGraphError(Exception):
    """Base class for all package errors."""


class ShapeError(FairGraphError):
    """Operands with incompatible shapes."""


class NumericError(FairGraphError):
    """Non-finite values or domain violations in a numeric kernel."""


class TapeError(FairGraphError):
    """Gradient requested for a value not built from recorded operations."""


class UndefinedRatioError(FairGraphError):
    """Homophily ratio requested on a graph with no edges."""


class DegenerateEditError(FairGraphError):
    """Graph editing removed every edge; the caller decides the fallback."""

    def __init__(self, message, graph=None, report=None):
        super().__init__(message)
        self.graph = graph
        self.report = report


class InfeasibleError(FairGraphError):
    """Requested deletion budget or target cannot be met with Type III edges."""


class InvalidTargetError(FairGraphError):
    """Homophily targets outside the ranges the budgeted editor accepts."""


class ResourceLimitError(FairGraphError):
    """Exhaustive oracle invoked beyond its enumeration limit."""


class CapacityError(FairGraphError):
    """Negative-edge sample larger than the number of non-adjacent pairs."""


class UndefinedMetricError(FairGraphError):
    """Metric undefined for this data (empty group, single-class labels, ...)."""


class DatasetError(FairGraphError):
    """Base class for dataset ingestion failures."""


class DatasetParseError(DatasetError):
    """A dataset file exists but could not be parsed."""


class MissingColumnError(DatasetError):
    """A column named in the dataset meta is absent from the feature table."""


class NonBinarySensitiveError(DatasetError):
    """Sensitive column not binary after applying the meta mapping."""


class DivergenceError(FairGraphError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, phase=None):
        super().__init__(message)
        self.epoch = epoch
        self.phase = phase


class ConfigError(FairGraphError):
    """Invalid training configuration or CLI usage."""


class VerificationError(FairGraphError):
    """A verification suite found a counterexample."""

    def __init__(self, message, counterexample=None):
        super().__init__(message)
        self.counterexample = counterexample
