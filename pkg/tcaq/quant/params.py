"""Quantization parameter types."""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping

import numpy as np

from ..errors import TcaqError

SCALE_FLOOR = 1e-8
LOG2_ZERO_CODE = -1  # reserved code for exact zeros under the log2 quantizer
MIN_BITS = 2
MAX_BITS = 8


class QuantizationError(TcaqError):
    """Base exception for quantization errors."""
    pass


class QuantParamsError(QuantizationError):
    """Raised when quantization parameters are invalid."""
    pass


class QuantizerKind(Enum):
    """Quantizer families."""
    UNIFORM = "uniform"
    LOG2 = "log2"


class Granularity(Enum):
    """Parameter sharing granularity."""
    PER_TENSOR = "per_tensor"
    PER_CHANNEL = "per_channel"


_KIND_CODES = {QuantizerKind.UNIFORM: 0.0, QuantizerKind.LOG2: 1.0}
_GRANULARITY_CODES = {Granularity.PER_TENSOR: 0.0, Granularity.PER_CHANNEL: 1.0}


def kind_code(kind: QuantizerKind) -> float:
    """Numeric code of a quantizer kind, as stored in archives."""
    return _KIND_CODES[kind]


def kind_from_code(code: float) -> QuantizerKind:
    for kind, value in _KIND_CODES.items():
        if value == float(code):
            return kind
    raise QuantParamsError(f"Unknown quantizer kind code {code}")


@dataclass(eq=False)
class QuantParams:
    """
    Scale, zero point and bit width of one quantizer.

    ``scale`` and ``zero_point`` are 0-d for per-tensor parameters and 1-d
    (one entry per slice along ``axis``) for per-channel ones. Scales are
    held in float32 so archived parameters reproduce exactly.
    """
    kind: QuantizerKind
    bits: int
    scale: np.ndarray
    zero_point: np.ndarray
    granularity: Granularity = Granularity.PER_TENSOR
    axis: int = 0

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=np.float32)
        self.zero_point = np.asarray(np.rint(self.zero_point), dtype=np.int64)
        if self.zero_point.shape != self.scale.shape:
            self.zero_point = np.broadcast_to(self.zero_point, self.scale.shape).copy()
        self.validate()

    @property
    def qmax(self) -> int:
        """Largest code: 2^bits - 1 (also the log2 level count L)."""
        return 2 ** self.bits - 1

    def validate(self) -> None:
        """
        Check the parameter invariants.

        Raises:
            QuantParamsError: If any invariant is violated.
        """
        if not MIN_BITS <= int(self.bits) <= MAX_BITS:
            raise QuantParamsError(f"bits must be in [{MIN_BITS}, {MAX_BITS}], got {self.bits}")
        if not np.all(np.isfinite(self.scale)) or np.any(self.scale <= 0):
            raise QuantParamsError(f"scale must be positive and finite, got {self.scale}")
        if self.granularity == Granularity.PER_TENSOR and self.scale.ndim != 0:
            raise QuantParamsError(f"per_tensor parameters need a scalar scale, got shape {self.scale.shape}")
        if self.granularity == Granularity.PER_CHANNEL and self.scale.ndim != 1:
            raise QuantParamsError(f"per_channel parameters need a 1-d scale, got shape {self.scale.shape}")
        if self.kind == QuantizerKind.UNIFORM:
            if np.any(self.zero_point < 0) or np.any(self.zero_point > self.qmax):
                raise QuantParamsError(
                    f"uniform zero point must be in [0, {self.qmax}], got {self.zero_point}"
                )
        elif np.any(self.zero_point != 0):
            raise QuantParamsError(f"log2 zero point must be 0, got {self.zero_point}")

    def broadcast(self, ndim: int) -> tuple[np.ndarray, np.ndarray]:
        """Scale and zero point shaped to broadcast against an ndim-array."""
        if self.granularity == Granularity.PER_TENSOR:
            return self.scale, self.zero_point
        shape = [1] * ndim
        shape[self.axis] = self.scale.shape[0]
        return self.scale.reshape(shape), self.zero_point.reshape(shape)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantParams):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.bits == other.bits
            and self.granularity == other.granularity
            and self.axis == other.axis
            and np.array_equal(self.scale, other.scale)
            and np.array_equal(self.zero_point, other.zero_point)
        )

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary for JSON serialization."""
        return {
            "kind": self.kind.value,
            "bits": self.bits,
            "scale": self.scale.tolist(),
            "zero_point": self.zero_point.tolist(),
            "granularity": self.granularity.value,
            "axis": self.axis,
        }

    def to_records(self, prefix: str) -> dict[str, np.ndarray]:
        """Archive records named ``<prefix>/<field>``."""
        return {
            f"{prefix}/kind": np.float32(_KIND_CODES[self.kind]),
            f"{prefix}/bits": np.float32(self.bits),
            f"{prefix}/scale": self.scale,
            f"{prefix}/zero_point": self.zero_point.astype(np.float32),
            f"{prefix}/granularity": np.float32(_GRANULARITY_CODES[self.granularity]),
            f"{prefix}/axis": np.float32(self.axis),
        }

    @classmethod
    def from_records(cls, prefix: str, records: Mapping[str, np.ndarray]) -> "QuantParams":
        try:
            granularity_code = float(records[f"{prefix}/granularity"])
            granularity = next(g for g, c in _GRANULARITY_CODES.items() if c == granularity_code)
            return cls(
                kind=kind_from_code(float(records[f"{prefix}/kind"])),
                bits=int(records[f"{prefix}/bits"]),
                scale=records[f"{prefix}/scale"],
                zero_point=records[f"{prefix}/zero_point"],
                granularity=granularity,
                axis=int(records[f"{prefix}/axis"]),
            )
        except (KeyError, StopIteration) as e:
            raise QuantParamsError(f"Incomplete quant param records under '{prefix}': {e}") from e
