"""Exception types shared across the planner."""


class ConfigurationError(ValueError):
    """Inconsistent shapes, parameters or model settings."""


class ScenarioError(ValueError):
    """A scenario is malformed or places something where it cannot be."""

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class InfeasibleError(RuntimeError):
    """No goal state can be reached within the planning horizon."""

    def __init__(self, message, agent=None):
        super().__init__(message)
        self.agent = agent


class NumericalCollapseError(RuntimeError):
    """A backtraced state distribution lost all of its mass."""


class UnsupportedOperationError(RuntimeError):
    """A non-differentiable primitive was used on a recorded path."""


class RefusalError(ValueError):
    """A brute-force search was asked to solve an instance above its size guard."""
