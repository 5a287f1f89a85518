"""Integer tensor container, bit-plane codec, synthetic data, and file exchange.

Everything downstream of this module operates on signed two's-complement
integers.  Tensors are stored row-major in their native numpy dtype; the
bit-plane decomposition produces the per-bit binary vectors that the PiM
array consumes word-line by word-line.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

DTYPES = {"i8": np.int8, "i16": np.int16, "i32": np.int32}
DTYPE_BITS = {"i8": 8, "i16": 16, "i32": 32}


class TensorFormatError(ValueError):
    """Malformed header or truncated payload in an exchange file."""


def _check_range(values: np.ndarray, bits: int) -> None:
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if values.size and (values.min() < lo or values.max() > hi):
        raise OverflowError(
            f"value out of range for {bits}-bit two's complement "
            f"[{lo}, {hi}]: min={values.min()} max={values.max()}"
        )


@dataclass(frozen=True)
class IntTensor:
    """Row-major signed integer tensor with an explicit element width."""

    dtype: str
    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise TensorFormatError(f"unknown dtype {self.dtype!r}")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        arr = np.asarray(self.data)
        if arr.size != math.prod(self.shape):
            raise ValueError(
                f"data length {arr.size} does not match shape {self.shape}"
            )
        _check_range(arr.astype(np.int64, copy=False), self.width)
        arr = arr.astype(DTYPES[self.dtype]).reshape(self.shape)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return DTYPE_BITS[self.dtype]

    def flat(self) -> np.ndarray:
        """Row-major int64 view of the elements."""
        return self.data.reshape(-1).astype(np.int64)


@dataclass(frozen=True)
class BitPlane:
    """One bit position across a vector, packed 8 bits per byte (LSB of
    element 0 in bit 0 of byte 0)."""

    bit_index: int
    bits: np.ndarray
    length: int
    sign_plane: bool

    def unpacked(self) -> np.ndarray:
        """0/1 vector of `length` elements."""
        return np.unpackbits(self.bits, count=self.length, bitorder="little")


@dataclass(frozen=True)
class ModelShape:
    """Attention problem dimensions: batch, tokens, hidden, heads, head dim."""

    b: int
    n: int
    d: int
    h: int
    d_k: int

    def __post_init__(self):
        for name in ("b", "n", "d", "h", "d_k"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.d != self.h * self.d_k:
            raise ValueError(f"D={self.d} must equal H*d_k={self.h * self.d_k}")

    @classmethod
    def parse(cls, text: str) -> "ModelShape":
        parts = [int(p) for p in text.split(",")]
        if len(parts) != 5:
            raise ValueError("shape must be B,N,D,H,dk")
        return cls(*parts)


@dataclass(frozen=True)
class PrecisionConfig:
    """Operand bit widths for the integer pipeline."""

    ibp: int = 8
    wbp: int = 8
    q_i: int = 8
    q_o: int = 8

    def __post_init__(self):
        for name in ("ibp", "wbp", "q_i", "q_o"):
            v = getattr(self, name)
            if not 2 <= v <= 32:
                raise ValueError(f"{name}={v} outside [2, 32]")


def bit_decompose(v, bp: int, order: str = "lsb") -> list[BitPlane]:
    """Split a signed integer vector into `bp` two's-complement bit planes.

    `order` selects the list ordering only ("lsb" or "msb"); plane identity
    is always carried by `bit_index`.
    """
    if order not in ("lsb", "msb"):
        raise ValueError(f"order must be 'lsb' or 'msb', got {order!r}")
    arr = np.asarray(v, dtype=np.int64).reshape(-1)
    _check_range(arr, bp)
    planes = []
    for i in range(bp):
        bits = ((arr >> i) & 1).astype(np.uint8)
        planes.append(
            BitPlane(
                bit_index=i,
                bits=np.packbits(bits, bitorder="little"),
                length=arr.size,
                sign_plane=(i == bp - 1),
            )
        )
    if order == "msb":
        planes.reverse()
    return planes


def bit_recompose(planes: list[BitPlane], bp: int) -> np.ndarray:
    """Exact inverse of :func:`bit_decompose`; accepts planes in any order."""
    if len(planes) != bp:
        raise ValueError(f"expected {bp} planes, got {len(planes)}")
    lengths = {p.length for p in planes}
    if len(lengths) != 1:
        raise ValueError(f"plane length mismatch: {sorted(lengths)}")
    indices = sorted(p.bit_index for p in planes)
    if indices != list(range(bp)):
        raise ValueError(f"bit indices must cover 0..{bp - 1}, got {indices}")
    out = np.zeros(planes[0].length, dtype=np.int64)
    for p in planes:
        weight = -(1 << p.bit_index) if p.bit_index == bp - 1 else (1 << p.bit_index)
        out += p.unpacked().astype(np.int64) * weight
    return out


def gen_tensor(
    shape,
    dtype: str = "i8",
    distribution: str = "uniform",
    seed: int = 0,
    low: int | None = None,
    high: int | None = None,
    sigma: float | None = None,
    density: float | None = None,
) -> IntTensor:
    """Deterministic synthetic tensor.

    distributions:
      uniform   - integers in [low, high], defaulting to the full dtype range
      gaussian  - round(N(0, sigma)) clipped to the dtype range (sigma
                  defaults to a quarter of the positive range)
      sparse    - zero with probability 1-density, else uniform in [low, high]
                  (default nonzero range excludes 0)
    """
    if dtype not in DTYPES:
        raise TensorFormatError(f"unknown dtype {dtype!r}")
    bits = DTYPE_BITS[dtype]
    lo_full, hi_full = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    rng = np.random.default_rng(seed)
    count = math.prod(tuple(shape))

    if distribution == "uniform":
        lo = lo_full if low is None else low
        hi = hi_full if high is None else high
        data = rng.integers(lo, hi + 1, size=count, dtype=np.int64)
    elif distribution == "gaussian":
        s = (hi_full / 4.0) if sigma is None else float(sigma)
        data = np.clip(np.rint(rng.normal(0.0, s, size=count)), lo_full, hi_full)
        data = data.astype(np.int64)
    elif distribution == "sparse":
        p = 0.5 if density is None else float(density)
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"density {p} outside [0, 1]")
        lo = 1 if low is None else low
        hi = hi_full if high is None else high
        data = rng.integers(lo, hi + 1, size=count, dtype=np.int64)
        data[rng.random(count) >= p] = 0
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    return IntTensor(dtype=dtype, shape=tuple(shape), data=data)


def save_tensor(tensor: IntTensor, path: str | os.PathLike) -> None:
    """Write the exchange format: one JSON header line + raw LE payload.

    The write is atomic (temp file + rename).
    """
    header = {
        "dtype": tensor.dtype,
        "shape": list(tensor.shape),
        "order": "row-major",
        "endian": "little",
    }
    payload = np.ascontiguousarray(tensor.data).astype(
        np.dtype(DTYPES[tensor.dtype]).newbyteorder("<")
    )
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(json.dumps(header).encode("ascii") + b"\n")
            f.write(payload.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_tensor(path: str | os.PathLike) -> IntTensor:
    """Read an exchange file back; byte-exact round trip with save_tensor."""
    with open(path, "rb") as f:
        line = f.readline()
        if not line.endswith(b"\n"):
            raise TensorFormatError("missing header newline")
        try:
            header = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TensorFormatError(f"malformed JSON header: {exc}") from exc
        for key in ("dtype", "shape"):
            if key not in header:
                raise TensorFormatError(f"header missing {key!r}")
        dtype = header["dtype"]
        if dtype not in DTYPES:
            raise TensorFormatError(f"unknown dtype {dtype!r}")
        shape = tuple(int(s) for s in header["shape"])
        if header.get("endian", "little") != "little":
            raise TensorFormatError("only little-endian payloads supported")
        if header.get("order", "row-major") != "row-major":
            raise TensorFormatError("only row-major payloads supported")
        expected = math.prod(shape) * (DTYPE_BITS[dtype] // 8)
        payload = f.read()
        if len(payload) != expected:
            raise TensorFormatError(
                f"payload is {len(payload)} bytes, expected {expected}"
            )
    data = np.frombuffer(payload, dtype=np.dtype(DTYPES[dtype]).newbyteorder("<"))
    return IntTensor(dtype=dtype, shape=shape, data=data.astype(DTYPES[dtype]))
