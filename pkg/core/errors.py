# errors.py
# --------------------------------------------------------------------------------------
# Purpose:
#   One exception family for the whole lab so callers can catch LabError
#   at the CLI boundary, or the narrower builtin they already expect
#
# Kinds:
#   DimensionError  -> shapes/lengths disagree (also a ValueError)
#   NumericError    -> NaN/Inf produced or consumed (also an ArithmeticError)
#   ContractError   -> a caller broke a documented pre-condition
#   ConfigError     -> invalid configuration or missing artifacts
#   InputError      -> token ids / prompt lengths out of range
#   TapError        -> tap point outside the model
#   FormatError     -> checkpoint / cache / dataset file is malformed
#   TrainingError   -> a training run diverged
# --------------------------------------------------------------------------------------


class LabError(Exception):
    """Base class for every error raised by the lab"""


class DimensionError(LabError, ValueError):
    pass


class NumericError(LabError, ArithmeticError):
    pass


class ContractError(LabError, ValueError):
    pass


class ConfigError(LabError, ValueError):
    pass


class InputError(LabError, IndexError):
    pass


class TapError(LabError, IndexError):
    pass


class FormatError(LabError, ValueError):
    pass


class TrainingError(LabError, RuntimeError):
    pass
