"""Exception types shared across the package."""


class CitysegError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CitysegError, ValueError):
    """Caller passed data that violates a documented precondition."""


class EmptyDatasetError(CitysegError, ValueError):
    """No usable trips survived ingestion."""


class NumericalFailureError(CitysegError, RuntimeError):
    """Non-finite values appeared during iteration."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class NotFoundError(CitysegError, KeyError):
    """Requested dataset/run/frame/snapshot does not exist."""
