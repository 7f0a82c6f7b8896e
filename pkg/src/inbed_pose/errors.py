"""Exception hierarchy shared across the pipeline stages."""


class InBedPoseError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(InBedPoseError, ValueError):
    pass


class MalformedDatasetError(InBedPoseError):
    pass


class CheckpointIncompatibleError(InBedPoseError):
    pass


class TrainingFailureError(InBedPoseError, RuntimeError):
    """Raised when a loss goes non-finite.

    ``last_good_state`` holds the most recent finite parameter snapshot (or
    ``None`` if the very first step diverged).
    """

    def __init__(self, message, last_good_state=None):
        super().__init__(message)
        self.last_good_state = last_good_state


class MissingPrerequisiteError(InBedPoseError):
    pass
