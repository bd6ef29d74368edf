from dataclasses import dataclass

import numpy as np

from app.core.errors import ArgumentError

DESCRIPTOR_BITS = 256


@dataclass(frozen=True)
class BandDescriptor:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool).reshape(-1).copy()
        if bits.size != DESCRIPTOR_BITS:
            raise ArgumentError(f"descriptor must have {DESCRIPTOR_BITS} bits, got {bits.size}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def hamming(self, other: "BandDescriptor") -> int:
        return int(np.count_nonzero(self.bits != other.bits))

    def hex(self) -> str:
        return np.packbits(self.bits).tobytes().hex()


@dataclass(frozen=True)
class LineMatch:
    index_a: int
    index_b: int
    hamming: int
    angle_diff: float
