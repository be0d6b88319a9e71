"""Exception types shared across the toolkit."""


class DimensionMismatchError(ValueError):
    """Inputs disagree on dimensionality or live on different spaces."""


class ConfigError(ValueError):
    """A configuration value violates its documented range or schema."""


class CompositionError(ValueError):
    """A composition is structurally invalid or detectably non-integrable."""


class ChainError(RuntimeError):
    """An MCMC chain produced non-finite state or gradients."""


class TrainingError(RuntimeError):
    """Training aborted: the loss became non-finite."""
