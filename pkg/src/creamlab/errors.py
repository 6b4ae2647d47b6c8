"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the operation's domain."""


class DataError(ValueError):
    """Input data is missing or malformed (NaN rewards, absent log-probs)."""


class ConfigError(ValueError):
    """A run configuration failed validation.

    ``field`` names the offending key so the CLI can report it.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class TrainingError(RuntimeError):
    """Training diverged or could not proceed; ``stage`` names where."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
