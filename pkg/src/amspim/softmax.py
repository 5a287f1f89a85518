"""Integer-only, division-free softmax with per-token base adjustment.

The exponential is approximated on [-ln2, 0] by a fixed quadratic, and any
input is folded into that interval by subtracting multiples of the
precomputed constant l ~ -ln2/S (each subtraction halves the result, so the
multiple count Q simply becomes a right shift).  The quotient Q itself is
obtained by conditional subtract-and-shift, never by a divide.

Per-token exponent information arrives as n_e, the accumulated number of
magnitude bits the token left unused on its way here.  Entry n_e of the
parameter table evaluates the exponential with its input scale halved n_e
times, which is exactly the base change e -> e**(1/2**n_e); integer inputs
are never rescaled, so no information is lost.

This module deliberately contains no division operator at all; a test
audits the AST for Div/FloorDiv/Mod nodes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .quant import emsb_quantize

# Quadratic fit of exp(x) on [-ln2, 0]: A*x^2 + B*x + C.
# Stored pre-divided (B/A, C/A) so the module itself never divides.
EXP_POLY_A = 0.35815147
EXP_POLY_B_OVER_A = 2.7073219843815524
EXP_POLY_C_OVER_A = 2.7921162178834434
LN2 = 0.6931471805599453
A_FRACTION_BITS = 14
_INT16_MIN, _INT16_MAX = -32768, 32767


class LutOverflowError(OverflowError):
    """A parameter does not fit its 16-bit storage field."""


@dataclass(frozen=True)
class SoftmaxConfig:
    """Input/output bit precisions of the softmax stage."""

    q_i: int = 8
    q_o: int = 8

    def __post_init__(self):
        for name in ("q_i", "q_o"):
            v = getattr(self, name)
            if not 4 <= v <= 16:
                raise ValueError(f"{name}={v} outside [4, 16]")


@dataclass(frozen=True)
class PolyScale:
    """Scale of a polynomial output: a * 2**(exp2 - A_FRACTION_BITS)."""

    a: int
    exp2: int

    def as_float(self) -> float:
        return math.ldexp(self.a, self.exp2 - A_FRACTION_BITS)

    def shifted(self, down: int) -> "PolyScale":
        return PolyScale(self.a, self.exp2 - down)


@dataclass(frozen=True)
class LutEntry:
    """Parameters serving one n_e value.

    b and c are mantissas in the entry's own fixed-point scale: the
    effective coefficients are b << index and c << (2 * index).  Storing
    mantissas keeps every field within int16 while the effective constants
    double (respectively quadruple) per entry, which is what makes the
    (x, n_e) == (2x, n_e + 1) equivalence exact.
    """

    index: int
    a: int
    b: int
    c: int
    s_exp: int
    l: int

    def __post_init__(self):
        if self.l >= 0:
            raise ValueError("range-reduction constant l must be negative")
        for name in ("a", "b", "c", "s_exp", "l"):
            v = getattr(self, name)
            if not _INT16_MIN <= v <= _INT16_MAX:
                raise LutOverflowError(f"field {name}={v} exceeds int16")

    @property
    def b_effective(self) -> int:
        return self.b << self.index

    @property
    def c_effective(self) -> int:
        return self.c << (2 * self.index)

    def input_scale(self) -> float:
        return math.ldexp(1.0, self.s_exp)


@dataclass(frozen=True)
class SoftmaxLUT:
    """Per-n_e parameter table; immutable and shareable across tokens."""

    entries: tuple[LutEntry, ...]
    q_i: int

    @property
    def n_e_max(self) -> int:
        return len(self.entries) - 1

    def entry(self, n_e: int) -> LutEntry:
        if n_e < 0:
            raise IndexError(f"n_e must be nonnegative, got {n_e}")
        return self.entries[min(n_e, self.n_e_max)]

    def serialize(self) -> bytes:
        """Flat little-endian (a, b, c, s_exp, l) int16 records, 10 bytes
        per entry."""
        out = bytearray()
        for e in self.entries:
            out += struct.pack("<5h", e.a, e.b, e.c, e.s_exp, e.l)
        return bytes(out)


def deserialize_lut(blob: bytes, q_i: int) -> SoftmaxLUT:
    record = struct.calcsize("<5h")
    count, rem = divmod_free(len(blob), record)
    if rem or count == 0:
        raise ValueError(f"blob length {len(blob)} is not a multiple of {record}")
    entries = []
    for k in range(count):
        a, b, c, s_exp, l = struct.unpack_from("<5h", blob, k * record)
        entries.append(LutEntry(index=k, a=a, b=b, c=c, s_exp=s_exp, l=l))
    return SoftmaxLUT(entries=tuple(entries), q_i=q_i)


def divmod_free(num: int, den: int) -> tuple[int, int]:
    """divmod for nonnegative ints via subtract-and-shift (no divide)."""
    if den <= 0 or num < 0:
        raise ValueError("divmod_free requires num >= 0, den > 0")
    q = 0
    rem = num
    for j in range(max(0, num.bit_length() - den.bit_length() + 1) - 1, -1, -1):
        step = den << j
        if step <= rem:
            rem -= step
            q += 1 << j
    return q, rem


def build_lut(
    q_i: int, n_e_max: int = 9, s_base_log2: int | None = None
) -> SoftmaxLUT:
    """Construct the parameter table for a given input precision.

    Entry k serves tokens whose inputs carry k unused magnitude bits; its
    effective input scale is 2**(s_base_log2 - k).  The default base scale
    2**(3 - q_i) maps the full q_i-bit input range onto about 8 natural-log
    units.  Raises LutOverflowError when a field cannot be stored in 16
    bits (for the default base scale this happens at q_i >= 10).
    """
    if n_e_max > 15:
        raise ValueError(f"n_e_max {n_e_max} > 15")
    if n_e_max < 0:
        raise ValueError("n_e_max must be nonnegative")
    sbl = (3 - q_i) if s_base_log2 is None else int(s_base_log2)
    inv_s = math.ldexp(1.0, -sbl)
    a0 = round(EXP_POLY_A * (1 << A_FRACTION_BITS))
    b0 = round(EXP_POLY_B_OVER_A * inv_s)
    c0 = round(EXP_POLY_C_OVER_A * inv_s * inv_s)
    l0 = -round(LN2 * inv_s)
    if l0 >= 0:
        raise ValueError(
            f"base scale 2**{sbl} too coarse: range-reduction constant "
            "rounds to zero"
        )
    entries = []
    for k in range(n_e_max + 1):
        entries.append(
            LutEntry(index=k, a=a0, b=b0, c=c0, s_exp=sbl - k, l=l0 << k)
        )
    return SoftmaxLUT(entries=tuple(entries), q_i=q_i)


def vdr_ipoly(r, entry: LutEntry):
    """Quadratic exponential kernel: r*(r + b) + c at scale a * S^2.

    r must lie in [l, 0]; the result dequantizes to about exp(r * S_eff).
    """
    arr = np.asarray(r, dtype=np.int64)
    if arr.size and (arr.min() < entry.l or arr.max() > 0):
        raise ValueError(f"r outside [{entry.l}, 0]")
    x_poly = arr * (arr + entry.b_effective) + entry.c_effective
    scale = PolyScale(entry.a, 2 * entry.s_exp)
    if np.isscalar(r) or getattr(r, "ndim", 1) == 0:
        return int(x_poly), scale
    return x_poly, scale


def _quotient_shift_sub(num: np.ndarray, den: int, q_cap: int) -> tuple[np.ndarray, np.ndarray]:
    # floor(num/den) for num >= 0, den > 0 by conditional subtract-and-shift;
    # caller guarantees the quotient is at most q_cap.
    q = np.zeros_like(num)
    rem = num.copy()
    for j in range(max(q_cap.bit_length() - 1, 0), -1, -1):
        step = den << j
        take = rem >= step
        rem[take] -= step
        q[take] += np.int64(1) << j
    return q, rem


@dataclass(frozen=True)
class IExpResult:
    """Unshifted polynomial value plus the per-element shift count.

    The represented number is value * 2**(-q) at scale poly_scale; keeping
    the pair separate (instead of left-shifting value by q) bounds the
    integer width independently of q_i.
    """

    value: np.ndarray | int
    q: np.ndarray | int
    poly_scale: PolyScale

    def scale(self) -> PolyScale:
        """Combined scale including the 2**(-q) factor (scalar results)."""
        if not np.isscalar(self.q) and getattr(self.q, "ndim", 0) != 0:
            raise ValueError("per-element scales: use poly_scale and q")
        return self.poly_scale.shifted(int(self.q))

    def dequantize(self):
        v = np.asarray(self.value, dtype=np.float64)
        q = np.asarray(self.q, dtype=np.int64)
        out = v * np.ldexp(self.poly_scale.as_float(), -q)
        return float(out) if out.ndim == 0 else out


def vdr_iexp(x_sub, entry: LutEntry, q_i: int) -> IExpResult:
    """Range-reduced integer exponential of a nonpositive input.

    Q = clip(floor(x_sub / l), 0, 2*q_i) via subtract-and-shift, then the
    residue r = x_sub - Q*l lands in [l, 0] for the quadratic kernel.
    Inputs below 2*q_i*l saturate at the underflow floor.
    """
    scalar = np.isscalar(x_sub) or getattr(x_sub, "ndim", 1) == 0
    arr = np.atleast_1d(np.asarray(x_sub, dtype=np.int64))
    if arr.size and arr.max() > 0:
        raise ValueError("x_sub must be <= 0 (max was not subtracted?)")
    q_cap = 2 * q_i
    clamped = np.maximum(arr, q_cap * entry.l)
    q, rem = _quotient_shift_sub(-clamped, -entry.l, q_cap)
    r = -rem
    x_poly, s_poly = vdr_ipoly(r, entry)
    x_poly = np.atleast_1d(np.asarray(x_poly))
    if scalar:
        return IExpResult(value=int(x_poly[0]), q=int(q[0]), poly_scale=s_poly)
    return IExpResult(value=x_poly, q=q, poly_scale=s_poly)


@dataclass(frozen=True)
class SoftmaxResult:
    """Quantized softmax scores for one token.

    values are nonnegative q_o-bit codes proportional to the softmax
    numerators exp((x - max) * S_eff); the shared normalizer is left to the
    consumer (a linear stage never needs it explicitly).  The real scale of
    one code unit is poly_scale * 2**shift.
    """

    values: np.ndarray
    shift: int
    poly_scale: PolyScale
    entry_index: int
    q_o: int

    def dequantize(self) -> np.ndarray:
        unit = np.ldexp(self.poly_scale.as_float(), self.shift)
        return self.values.astype(np.float64) * unit


def vdr_norm(x, n_e: int, lut: SoftmaxLUT, q_o: int) -> SoftmaxResult:
    """Max-subtract, exponentiate, align, and window into q_o bits.

    Every element is shifted right by its own Q so all share the scale
    a*S^2, then one per-token eMSB quantization maps the largest
    exponential to the top of the q_o-bit window.
    """
    arr = np.asarray(x, dtype=np.int64).reshape(-1)
    if arr.size == 0:
        raise ValueError("empty logit vector")
    entry = lut.entry(n_e)
    x_sub = arr - arr.max()
    res = vdr_iexp(x_sub, entry, lut.q_i)
    aligned = np.asarray(res.value) >> np.asarray(res.q)
    qt = emsb_quantize(aligned, q_o)
    return SoftmaxResult(
        values=qt.values,
        shift=qt.shift,
        poly_scale=res.poly_scale,
        entry_index=entry.index,
        q_o=q_o,
    )
