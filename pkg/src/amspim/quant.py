"""Division-free integer quantization built on effective-MSB detection.

A token is requantized by locating the highest information-carrying bit
across its elements (the effective MSB) and arithmetic-right-shifting so
that the token's largest magnitude lands in the top of the target window.
No scale factors, no divisions: the shift count is the whole story, and it
is recorded per stage so the softmax can reconstruct the exponent later.

Keys and values are handled differently: they carry global context across
tokens, so they get a fixed shift derived from the accumulator width
(parse-from-MSB) instead of the data-dependent per-token shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EmsbInfo",
    "QuantizedToken",
    "TokenScaleTracker",
    "emsb",
    "emsb_info",
    "token_emsb",
    "emsb_quantize",
    "msb_parse_quantize",
    "default_acc_width",
]


@dataclass(frozen=True)
class EmsbInfo:
    """Effective MSB of one value relative to its container's top bit."""

    emsb: int
    container_msb: int

    def __post_init__(self):
        if not -1 <= self.emsb <= self.container_msb:
            raise ValueError(
                f"emsb {self.emsb} outside [-1, {self.container_msb}]"
            )

    @property
    def deficit(self) -> int:
        return self.container_msb - self.emsb


@dataclass(frozen=True)
class QuantizedToken:
    """Shift-quantized token: values fit `width` bits, real magnitude is
    values * 2**shift."""

    values: np.ndarray
    shift: int
    width: int

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.int64)
        lo, hi = -(1 << (self.width - 1)), (1 << (self.width - 1)) - 1
        if arr.size and (arr.min() < lo or arr.max() > hi):
            raise OverflowError(f"quantized values exceed {self.width}-bit range")
        object.__setattr__(self, "values", arr)
        if self.shift < 0:
            raise ValueError("shift must be nonnegative")


@dataclass
class TokenScaleTracker:
    """Accumulates per-stage (container MSB - token eMSB) deficits.

    The clamped sum n_e indexes the softmax parameter table; saturation at
    n_e_max is deliberate (the table has finitely many base adjustments).
    """

    n_e_max: int = 9
    stage_deficits: list[tuple[str, int]] = field(default_factory=list)

    def record(self, stage: str, deficit: int) -> None:
        if deficit < 0:
            raise ValueError(f"deficit must be nonnegative, got {deficit}")
        self.stage_deficits.append((stage, int(deficit)))

    @property
    def raw_total(self) -> int:
        return sum(d for _, d in self.stage_deficits)

    @property
    def n_e(self) -> int:
        return min(self.raw_total, self.n_e_max)


def emsb(x: int, width: int) -> int:
    """Index of the effective MSB of a `width`-bit signed value.

    Positive: highest set bit.  Negative: highest bit differing from the
    sign bit (equivalently the highest set bit of ~x).  Zero maps to the
    -1 sentinel, as does -1 itself (no information bits below the sign).
    """
    x = int(x)
    lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
    if not lo <= x <= hi:
        raise OverflowError(f"{x} does not fit {width}-bit two's complement")
    m = x if x >= 0 else ~x
    return m.bit_length() - 1


def emsb_info(x: int, width: int) -> EmsbInfo:
    return EmsbInfo(emsb=emsb(x, width), container_msb=width - 2)


def _bitlen(m: np.ndarray) -> np.ndarray:
    # branch-free bit length of nonnegative int64 values
    n = np.zeros(m.shape, dtype=np.int64)
    x = m.copy()
    for sh in (32, 16, 8, 4, 2, 1):
        big = x >= (np.int64(1) << sh)
        n[big] += sh
        x[big] >>= sh
    n[m > 0] += 1
    return n


def emsb_vector(v: np.ndarray) -> np.ndarray:
    """Per-element effective MSB (vectorized, -1 sentinel for 0 and -1)."""
    arr = np.asarray(v, dtype=np.int64)
    return _bitlen(np.where(arr >= 0, arr, ~arr)) - 1


def token_emsb(v, width: int | None = None) -> int:
    """Maximum per-element eMSB over one token; -1 iff the token is all zero."""
    arr = np.asarray(v, dtype=np.int64).reshape(-1)
    if arr.size == 0:
        raise ValueError("token_emsb of an empty vector")
    if width is not None:
        lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
        if arr.min() < lo or arr.max() > hi:
            raise OverflowError(f"token exceeds {width}-bit range")
    return int(emsb_vector(arr).max())


def emsb_quantize(
    v,
    width: int,
    tracker: TokenScaleTracker | None = None,
    container_msb: int | None = None,
    stage: str = "",
) -> QuantizedToken:
    """Per-token quantization by arithmetic right shift.

    shift = max(0, token_emsb - (width - 2)); every output is exactly
    floor(x / 2**shift).  When the token already fits (token_emsb <=
    width - 2) this is the identity.  The stage deficit
    (container_msb - token_emsb) goes to the tracker when one is supplied.
    """
    if width < 2:
        raise ValueError("width must be >= 2")
    arr = np.asarray(v, dtype=np.int64).reshape(-1)
    e = token_emsb(arr) if arr.size else -1
    shift = max(0, e - (width - 2))
    if tracker is not None:
        if container_msb is None:
            raise ValueError("container_msb required when tracking deficits")
        if e > container_msb:
            raise ValueError(
                f"token eMSB {e} exceeds container MSB {container_msb}"
            )
        tracker.record(stage or "unnamed", container_msb - e)
    return QuantizedToken(values=arr >> shift, shift=shift, width=width)


def msb_parse_quantize(v, width: int, acc_width: int) -> QuantizedToken:
    """Fixed-shift quantization for K/V: parse from the container MSB.

    shift = acc_width - width regardless of content, so all tokens share one
    scale and the global dynamic range of the tensor is preserved.
    """
    if acc_width < width:
        raise ValueError(f"acc_width {acc_width} must be >= width {width}")
    arr = np.asarray(v, dtype=np.int64)
    shift = acc_width - width
    return QuantizedToken(values=arr >> shift, shift=shift, width=width)


def default_acc_width(ibp: int, wbp: int, depth: int) -> int:
    """Full-precision GEMV partial-sum width: the widest value any
    accumulation over `depth` products can need."""
    return ibp + wbp + max(1, math.ceil(math.log2(max(2, depth))))
