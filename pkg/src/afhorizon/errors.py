"""Exception hierarchy shared across the package."""


class AfHorizonError(Exception):
    """Base class for all package errors."""


class ValidationError(AfHorizonError):
    """Invalid input data or configuration (bad contract, not bad luck)."""


class MissingArtifactError(AfHorizonError):
    """A pipeline stage input file that should exist does not."""

    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"missing required artifact: {self.path}")


class NumericalError(AfHorizonError):
    """A numerical procedure failed (non-finite values, no usable resample, ...)."""


class CollinearityError(ValidationError):
    """Covariate matrix is (numerically) rank deficient."""
