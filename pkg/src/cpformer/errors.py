"""Exception types.  Each maps to a CLI exit code."""


class CPformerError(Exception):
    exit_code = 1


class ConfigError(CPformerError, ValueError):
    exit_code = 1


class DataError(CPformerError, ValueError):
    exit_code = 2


class NumericError(CPformerError, ArithmeticError):
    exit_code = 3


class EvaluationError(NumericError):
    """A primitive produced a non-finite value or could not be evaluated."""

    def __init__(self, primitive: str, reason: str):
        self.primitive = primitive
        super().__init__(f"{primitive}: {reason}")


class TrainingError(NumericError):
    def __init__(self, step: int, reason: str, breakdown=None):
        self.step = step
        self.breakdown = breakdown
        msg = f"training aborted at step {step}: {reason}"
        if breakdown is not None:
            msg += f" ({breakdown})"
        super().__init__(msg)
