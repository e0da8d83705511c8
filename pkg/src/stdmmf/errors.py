"""Exception types raised across the toolkit."""


class ConfigError(ValueError):
    """Invalid configuration value; the message names the offending field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ShapeError(ValueError):
    pass


class DataError(ValueError):
    pass


class CheckpointError(ValueError):
    """Checkpoint could not be read or does not match the model.

    ``problems`` lists one entry per offending tensor or field.
    """

    def __init__(self, message, problems=()):
        self.problems = list(problems)
        if self.problems:
            message = message + ": " + "; ".join(self.problems)
        super().__init__(message)


class TrainingDiverged(RuntimeError):
    def __init__(self, step, diagnostics):
        self.step = step
        self.diagnostics = diagnostics
        lines = "\n".join(f"  {k}: {v}" for k, v in diagnostics.items())
        super().__init__(f"non-finite loss at step {step}\n{lines}")
