"""Semantic exception types shared across the package."""


class UnsupportedKernelError(ValueError):
    """Requested an operation a kernel family cannot provide."""


class CapacityError(RuntimeError):
    """A feature construction would exceed the configured feature budget."""


class AssumptionViolationError(ValueError):
    """A theoretical prerequisite (e.g. a positive minimum eigenvalue) fails."""


class InstanceGenerationError(RuntimeError):
    """Problem-instance sampling kept producing degenerate instances."""


class ConfigError(ValueError):
    """An experiment configuration document is malformed."""


class AggregationError(ValueError):
    """Trace files cannot be combined into one summary."""
