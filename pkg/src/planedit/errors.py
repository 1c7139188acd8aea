"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition or invariant."""


class CheckpointError(RuntimeError):
    """Raised when a checkpoint cannot be read or is structurally corrupt."""


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a non-finite loss.

    Carries the step index and the per-component losses observed at the
    point of failure so the run can be diagnosed from the exception alone.
    """

    def __init__(self, step: int, components: dict):
        self.step = step
        self.components = components
        super().__init__(f"non-finite loss at step {step}: {components}")
