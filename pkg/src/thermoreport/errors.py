"""Exception hierarchy shared across the pipeline.

The CLI maps these onto its exit-code taxonomy: bad inputs (2),
algorithmic failures (3), report-stage failures (4).
"""


class ThermoError(Exception):
    """Base class for all pipeline-domain failures."""


class InputError(ThermoError):
    """Unreadable, malformed, or contract-violating input data/parameters."""


class PipelineError(ThermoError):
    """An analysis stage reached a degenerate or unrecoverable state."""


class FlatCurveError(PipelineError):
    """Pulse detection found no usable rise in the mean temperature curve."""


class ZeroVarianceError(PipelineError):
    """Standardization requested on a map with zero variance."""


class TransportError(ThermoError):
    """VLM endpoint unreachable, misconfigured, or returned a bad response."""


class ReportSchemaError(ThermoError):
    """Report text does not satisfy the three-section schema."""
