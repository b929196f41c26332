"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Inconsistent or out-of-range configuration."""


class AdaptationError(RuntimeError):
    """Equalizer weight energy diverged during adaptation."""

    def __init__(self, message: str, block_index: int):
        super().__init__(message)
        self.block_index = block_index


class AlignmentError(ValueError):
    """Transmit/receive symbol streams are not aligned."""


class FitError(ValueError):
    """Degenerate data handed to a curve fit."""
