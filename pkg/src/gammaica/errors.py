"""Exception types shared across the toolkit."""


class GammaIcaError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(GammaIcaError, ValueError):
    """Array dimensions do not match the operation's contract."""


class InputError(GammaIcaError, ValueError):
    """Input data is invalid (non-finite, empty, wrong kind)."""


class DegenerateInputError(InputError):
    """Input is technically well-formed but statistically degenerate."""


class ParameterError(GammaIcaError, ValueError):
    """A numeric parameter is outside its allowed range."""


class StateError(GammaIcaError, RuntimeError):
    """An operation was called with stale or inconsistent state."""


class ConfigError(GammaIcaError, ValueError):
    """An experiment configuration failed validation."""


class NumericalError(GammaIcaError, ArithmeticError):
    """A numerical procedure failed (rank deficiency, divergence, ...)."""


class GenerationError(GammaIcaError, RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""
