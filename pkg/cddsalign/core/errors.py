"""
Exception hierarchy for cddsalign

Each error also derives from the builtin a caller would expect, so code that
catches ValueError / RuntimeError / OSError keeps working.
"""

from typing import Optional


class CddsError(Exception):
    """Base class for all cddsalign errors"""


class DimensionError(CddsError, ValueError):
    """Operand shapes are incompatible"""


class ContractError(CddsError, ValueError):
    """A documented precondition was violated"""


class ConfigError(CddsError, ValueError):
    """A configuration value is invalid"""


class NumericError(CddsError, ArithmeticError):
    """A forward operation produced NaN or Inf"""

    def __init__(self, op_name: str, message: Optional[str] = None):
        self.op_name = op_name
        super().__init__(message or f"non-finite value produced by op '{op_name}'")


class TapeError(CddsError, RuntimeError):
    """Misuse of a gradient tape (second backward, loss not recorded)"""


class FormatError(CddsError, ValueError):
    """A container file has an unknown magic or version"""


class CorruptionError(CddsError, ValueError):
    """A container file is truncated or internally inconsistent"""


class TrainingAborted(CddsError, RuntimeError):
    """Training stopped because a loss became non-finite"""

    def __init__(self, step: int, op_name: Optional[str], detail: str = ""):
        self.step = step
        self.op_name = op_name
        where = f" (first non-finite op: {op_name})" if op_name else ""
        super().__init__(f"training aborted at step {step}{where}{': ' + detail if detail else ''}")
