"""Exception hierarchy shared by every module."""


class RankflowError(Exception):
    pass


class SpecError(RankflowError, ValueError):
    """Invalid parameters or inputs."""


class NonPositiveSigma(SpecError):
    pass


class UnorderedInitial(SpecError):
    pass


class LengthMismatch(SpecError):
    pass


class NonPositiveEntry(SpecError):
    pass


class TooFewParticles(SpecError):
    pass


class UnsupportedDimension(SpecError):
    pass


class IndexOutOfRange(SpecError):
    pass


class NegativeY(SpecError):
    pass


class GrowthViolation(SpecError):
    pass


class NonPositiveGamma1(SpecError):
    pass


class BudgetError(RankflowError, RuntimeError):
    """A run needed more resources than it was allowed."""


class StepBudgetExceeded(BudgetError):
    pass


class WindowTooSmall(BudgetError):
    pass


class ConfigError(RankflowError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
