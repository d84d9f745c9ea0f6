"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an operation receives data violating its preconditions."""


class ConfigError(ValueError):
    """Raised when a loss configuration violates a mutual-exclusion rule."""


class InvalidSpecError(ValueError):
    """Raised when a scene specification cannot be rendered."""


class DivergenceError(RuntimeError):
    """Raised when optimization produces a non-finite loss or gradient.

    ``term`` names the first offending loss term so the failure is
    attributable, and ``step`` records when it happened.
    """

    def __init__(self, term: str, step: int | None = None):
        self.term = term
        self.step = step
        at = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite value in term '{term}'{at}")
