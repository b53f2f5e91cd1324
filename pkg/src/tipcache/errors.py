"""Exception hierarchy shared by all tipcache modules.

Class names double as the machine-readable error codes emitted by the CLI
(`code=<ClassName> msg=...`), so they stay short and stable.
"""

from __future__ import annotations


class TipCacheError(Exception):
    """Base class for all errors raised by this package."""

    @property
    def code(self) -> str:
        return type(self).__name__


# --- embedding storage -------------------------------------------------

class ZeroNormRow(TipCacheError):
    def __init__(self, row_index: int):
        super().__init__(f"row {row_index} has norm <= 1e-12")
        self.row_index = row_index


class BadMagic(TipCacheError):
    pass


class TruncatedFile(TipCacheError):
    pass


class CrcMismatch(TipCacheError):
    pass


class LabelOutOfRange(TipCacheError):
    pass


class NonFiniteValue(TipCacheError):
    pass


class DimTooSmall(TipCacheError):
    pass


class IoError(TipCacheError):
    pass


class NotNormalized(TipCacheError):
    pass


class InvalidData(TipCacheError):
    """Structural invariant violation without a more specific code."""


# --- cache construction -------------------------------------------------

class UnbalancedClasses(TipCacheError):
    def __init__(self, class_index: int, count: int, expected: int):
        super().__init__(
            f"class {class_index} has {count} samples, expected {expected}"
        )
        self.class_index = class_index
        self.count = count
        self.expected = expected


class NotDivisible(TipCacheError):
    def __init__(self, per_class: int, target: int):
        super().__init__(f"{per_class} samples per class not divisible by {target}")
        self.per_class = per_class
        self.target = target


# --- inference / training ----------------------------------------------

class DimMismatch(TipCacheError):
    pass


class NonFiniteLogit(TipCacheError):
    pass


class NonFiniteGradient(TipCacheError):
    pass


class StepOutOfRange(TipCacheError):
    pass


# --- harness --------------------------------------------------------------

class InsufficientSamples(TipCacheError):
    def __init__(self, class_index: int, have: int, need: int):
        super().__init__(f"class {class_index} has {have} samples, need {need}")
        self.class_index = class_index
        self.have = have
        self.need = need


class LengthMismatch(TipCacheError):
    pass
