"""
purilab Error Handling.

Custom exceptions and warnings for training, attack and evaluation code.
"""


class PurilabError(Exception):
    """
    Base class for every exception raised by purilab.

    Notes
    -----
    Catch this to handle any library failure in one place; the CLI does so and
    turns it into a stage-tagged diagnostic.
    """

    pass


# ---------------------------------------------------------------------------
# Data errors
# ---------------------------------------------------------------------------


class DataError(PurilabError):
    """
    Base class for errors caused by invalid, malformed or incompatible data.

    Notes
    -----
    Inherit from this class for any error that stems from arrays, datasets or
    files rather than from configuration.
    """

    pass


class ShapeError(DataError):
    """
    Raised when an array has an unexpected or incompatible shape.

    Notes
    -----
    Typically raised when a matrix's column count does not match a network's
    input width, or when gradients do not line up with their parameters.
    """

    pass


class EmptyDataError(DataError):
    """Raised when an operation that averages over samples receives none."""

    pass


class InsufficientDataError(DataError):
    """
    Raised when a dataset is too small for the requested allocation.

    Notes
    -----
    Split sizes are never silently truncated; ask for fewer samples or generate more.
    """

    pass


class LabelRangeError(DataError):
    """Raised when a class label is negative or not below the declared number of classes."""

    pass


class CSVFormatError(DataError):
    """
    Raised when a dataset CSV file cannot be parsed.

    Parameters
    ----------
    message :
        Description of the problem.
    line_number :
        One-based line of the offending row.
    """

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ModelFormatError(DataError):
    """Raised when a persisted network or bundle document is malformed or of an unknown version."""

    pass


# ---------------------------------------------------------------------------
# Configuration errors
# ---------------------------------------------------------------------------


class ConfigurationError(PurilabError):
    """
    Base class for configuration and parameter errors.

    Parameters
    ----------
    message :
        Description of the violation.
    field_path :
        Dotted path of the offending field, e.g. ``purifier.alpha``.

    Notes
    -----
    Inherit from this class for errors that arise from incorrect or conflicting
    options rather than from the data itself.
    """

    def __init__(self, message: str, field_path: str | None = None):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}" if field_path else message)


class ModeError(ConfigurationError):
    """
    Raised when purifier weights contradict the training mode.

    Notes
    -----
    ``base`` requires ``alpha == beta == 0``, ``inv`` requires ``beta == 0`` and
    ``mem`` requires ``alpha == 0``.
    """

    pass


class LayerSpecError(ConfigurationError):
    """Raised when a list of layer specifications does not describe a valid dense network."""

    pass


# ---------------------------------------------------------------------------
# Numerical errors
# ---------------------------------------------------------------------------


class NumericalError(PurilabError):
    """Base class for non-finite values and diverging optimisation."""

    pass


class NonFiniteError(NumericalError):
    """Raised when a forward pass produces NaN or infinite values."""

    pass


class DivergenceError(NumericalError):
    """
    Raised when a training loss becomes non-finite.

    Parameters
    ----------
    message :
        Description of which model diverged.
    epoch :
        Zero-based epoch in which the divergence was detected.
    losses :
        The loss values observed at the time, keyed by model name.
    """

    def __init__(self, message: str, epoch: int, losses: dict[str, float] | None = None):
        self.epoch = epoch
        self.losses = dict(losses or {})
        detail = ", ".join(f"{k}={v!r}" for k, v in sorted(self.losses.items()))
        super().__init__(f"{message} (epoch {epoch}{'; ' + detail if detail else ''})")


# ---------------------------------------------------------------------------
# Attack and pipeline errors
# ---------------------------------------------------------------------------


class AttackError(PurilabError):
    """Base class for attacks that cannot run with the data they were given."""

    pass


class MembershipLabelError(AttackError):
    """
    Raised when an attack's knowledge contract is violated.

    Notes
    -----
    Mlleaks must not see membership labels, while NSH needs both members and
    non-members to be present.
    """

    pass


class PipelineError(PurilabError):
    """
    Raised when a pipeline stage fails.

    Parameters
    ----------
    stage :
        Name of the failing stage, e.g. ``train-purifier``.
    cause :
        The underlying exception or a description of it.
    """

    def __init__(self, stage: str, cause: Exception | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


# ---------------------------------------------------------------------------
# Warnings
# ---------------------------------------------------------------------------


class NoiseFallbackWarning(UserWarning):
    """
    Issued when random noise could not keep the predicted label within the retry budget.

    Notes
    -----
    The original confidence vector is returned unchanged in that case.
    """

    pass


class GapWarning(UserWarning):
    """
    Issued when a target classifier has no positive generalization gap.

    Notes
    -----
    Membership inference metrics are meaningless without a gap; the run
    continues but its membership numbers should not be trusted.
    """

    pass
