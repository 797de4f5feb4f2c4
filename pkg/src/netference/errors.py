"""Error taxonomy shared across the package.

Exit-code mapping used by the CLI: InputError/ConfigError -> 2,
EstimationError -> 3, InferenceError -> 4.
"""


class InputError(ValueError):
    """Malformed data: bad indices, self-loops, missing columns, shape mismatches."""


class ConfigError(ValueError):
    """Inconsistent or invalid configuration (estimator/exposure/scenario settings)."""


class EstimationError(RuntimeError):
    """An estimation step cannot proceed (empty arm, degenerate subclasses, ...)."""


class RankDeficientError(EstimationError):
    """Design matrix is rank deficient; carries the names of dependent columns."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(
            "design matrix is rank deficient; dependent columns: "
            + ", ".join(self.columns)
        )


class InferenceError(RuntimeError):
    """Resampling inference failed (too many degenerate replicates)."""


class EstimationWarning(UserWarning):
    """Non-fatal estimation issues: merged subclasses, dropped cells, imputations."""
