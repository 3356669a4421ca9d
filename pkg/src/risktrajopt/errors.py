"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid problem, scenario, or run configuration."""


class RolloutDivergenceError(RuntimeError):
    """A simulated state left the finite range during integration."""

    def __init__(self, scenario: int, step: int, message: str | None = None):
        self.scenario = scenario
        self.step = step
        super().__init__(
            message
            or f"non-finite state in scenario {scenario} at step {step}"
        )
