from typing import Optional


class PegradError(Exception):
    """Root of every error raised by pegrad."""


class ShapeError(PegradError, ValueError):
    pass


class DomainError(PegradError, ValueError):
    """An elementwise op received a value outside its domain.

    :param message: Human readable description.
    :param index: Multi-index of the first offending element.
    """

    def __init__(self, message: str, index: tuple[int, ...]):
        super().__init__(f"{message} at index {index}")
        self.index = index


class IndexRangeError(PegradError, IndexError):
    def __init__(self, message: str, position: tuple[int, ...]):
        super().__init__(f"{message} at position {position}")
        self.position = position


class TraceError(PegradError, TypeError):
    pass


class UnsupportedOpError(PegradError, NotImplementedError):
    def __init__(self, kind: str, detail: Optional[str] = None):
        message = f"Unsupported op kind: {kind}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)
        self.kind = kind


class ContractError(PegradError, ValueError):
    pass


class UnsupportedArchitectureError(PegradError, ValueError):
    """A strategy was asked to handle a model containing a layer it cannot
    differentiate per example."""

    def __init__(self, strategy: str, layer_kind: str):
        super().__init__(
            f"unsupported layer: strategy {strategy} cannot handle {layer_kind} layers"
        )
        self.strategy = strategy
        self.layer_kind = layer_kind
        self.reason = "unsupported layer"


class ConfigError(PegradError, ValueError):
    pass


class IdxFormatError(PegradError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class OutOfMemoryError(PegradError, MemoryError):
    def __init__(self, required_bytes: int, cap_bytes: int):
        super().__init__(
            f"planned footprint of {required_bytes} bytes exceeds the cap of {cap_bytes} bytes"
        )
        self.required_bytes = required_bytes
        self.cap_bytes = cap_bytes
