"""Exception hierarchy shared across the package."""


class FlowrectError(Exception):
    """Base class for all package errors."""


class ShapeError(FlowrectError, ValueError):
    pass


class DomainError(FlowrectError, ValueError):
    """A scalar argument lies outside its admissible range."""


class NumericInputError(FlowrectError, ValueError):
    pass


class ScheduleError(FlowrectError, ValueError):
    pass


class TooFewFramesError(FlowrectError, ValueError):
    pass


class UnsupportedChannelError(FlowrectError, ValueError):
    pass


class SetupError(FlowrectError):
    """A required artifact (checkpoint, dataset) is missing or unusable."""


class TensorFormatError(FlowrectError):
    """Malformed tensor container; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DivergenceError(FlowrectError, ArithmeticError):
    """The sampler produced a non-finite or runaway latent."""

    def __init__(self, message: str, step: int, lam: float):
        super().__init__(f"{message} at step {step} (lambda={lam})")
        self.step = step
        self.lam = lam


class TrainingError(FlowrectError, ArithmeticError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} at step {step}")
        self.step = step
