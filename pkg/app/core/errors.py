from typing import Optional


class SemiSupError(Exception):
    """Base error. `exit_code` is what the CLI exits with when this reaches it."""
    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# --- 1. Argument / precondition errors (exit 2) ---
class BadArgumentsError(SemiSupError):
    exit_code = 2


class InsufficientSamplesError(BadArgumentsError):
    def __init__(self, class_id: int, available: int, requested: int):
        super().__init__(
            f"class {class_id} has {available} samples, {requested} labeled requested"
        )
        self.class_id = class_id


# --- 2. Dataset I/O errors (exit 3) ---
class DatasetError(SemiSupError):
    exit_code = 3


class DatasetParseError(DatasetError):
    def __init__(self, detail: str, line: int):
        super().__init__(f"line {line}: {detail}")
        self.line = line


class DatasetDimensionError(DatasetError):
    def __init__(self, detail: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {detail}" if line is not None else detail)
        self.line = line


class UnknownLabelError(DatasetError):
    def __init__(self, label, line: int):
        super().__init__(f"line {line}: unknown label {label!r}")
        self.label = label
        self.line = line


# --- 3. Solver status (exit 4 in strict mode) ---
class SolverNonConvergenceError(SemiSupError):
    exit_code = 4


# --- 4. Model-level errors ---
class ZeroVectorError(SemiSupError, ValueError):
    def __init__(self, detail: str = "zero-norm vector", index: Optional[int] = None):
        super().__init__(f"sample {index}: {detail}" if index is not None else detail)
        self.index = index


class DimensionMismatchError(SemiSupError, ValueError):
    def __init__(self, expected: int, got: int, index: Optional[int] = None):
        detail = f"expected dimension {expected}, got {got}"
        super().__init__(f"sample {index}: {detail}" if index is not None else detail)
        self.index = index


class SingleClassError(SemiSupError, ValueError):
    pass


class EmptyClassError(SemiSupError, ValueError):
    def __init__(self, class_id: int):
        super().__init__(f"class {class_id} has no training samples")
        self.class_id = class_id
