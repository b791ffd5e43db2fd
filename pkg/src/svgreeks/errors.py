"""Exception hierarchy shared by every module of the engine."""


class SVGreeksError(Exception):
    """Base class for all engine errors."""


class DegenerateVolatility(SVGreeksError):
    """The volatility surface fell below the configured floor."""


class UnsupportedOrder(SVGreeksError):
    """A y-partial of higher order than the model provides was requested."""


class InvalidGrid(SVGreeksError):
    pass


class NonFinite(SVGreeksError):
    """A simulated state or derivative object became inf/nan."""


class SingularWeight(SVGreeksError):
    """The integration-by-parts denominator vanished on a path."""


class UnsupportedCombination(SVGreeksError):
    pass


class ConfigError(SVGreeksError):
    """Invalid experiment configuration. ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class InsufficientRows(SVGreeksError):
    pass
