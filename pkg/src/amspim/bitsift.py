"""Sparse GEMV scheduling: pack the '1' bits of a plane into fixed-size
word-line activation segments.

A local pop controller scans fixed-width slices and splits out groups of
exactly `sawl_max` ones; a global controller merges the sub-size leftovers
of consecutive slices, padding the final shortfall with dummy word lines so
the analog summation always sees the same activation count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import BitPlane


@dataclass(frozen=True)
class BitSiftConfig:
    slice_len: int = 64
    sawl_max: int = 8
    dummy_rows: int = 7
    wl_count: int | None = None  # array bound; None = unconstrained

    def __post_init__(self):
        if self.dummy_rows != self.sawl_max - 1:
            raise ValueError(
                f"dummy_rows must be sawl_max - 1, got {self.dummy_rows}"
            )
        if self.slice_len < self.sawl_max:
            raise ValueError("slice_len must be >= sawl_max")


@dataclass(frozen=True)
class ComputeSegment:
    """One analog summation cycle: real WL indices plus dummy padding."""

    wl_indices: tuple[int, ...]
    dummy_count: int

    def __post_init__(self):
        idx = self.wl_indices
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("wl_indices must be strictly increasing")
        if self.dummy_count < 0:
            raise ValueError("dummy_count must be nonnegative")

    @property
    def width(self) -> int:
        return len(self.wl_indices) + self.dummy_count


@dataclass(frozen=True)
class SliceSchedule:
    segments: tuple[ComputeSegment, ...]
    sawl_max: int

    def __post_init__(self):
        seen: set[int] = set()
        for seg in self.segments:
            if seg.width != self.sawl_max:
                raise ValueError(
                    f"segment width {seg.width} != sawl_max {self.sawl_max}"
                )
            overlap = seen.intersection(seg.wl_indices)
            if overlap:
                raise ValueError(f"WL indices reused across segments: {overlap}")
            seen.update(seg.wl_indices)

    @property
    def cycles(self) -> int:
        return len(self.segments)

    @property
    def popcount(self) -> int:
        return sum(len(s.wl_indices) for s in self.segments)

    @property
    def dummy_activations(self) -> int:
        return sum(s.dummy_count for s in self.segments)

    def covered_positions(self) -> set[int]:
        out: set[int] = set()
        for s in self.segments:
            out.update(s.wl_indices)
        return out


@dataclass(frozen=True)
class LpcResult:
    """Per-slice scan: full groups of sawl_max ones plus the short tail."""

    popcount: int
    full_groups: tuple[tuple[int, ...], ...]
    remainder: tuple[int, ...]


def _as_bits(plane) -> np.ndarray:
    if isinstance(plane, BitPlane):
        return plane.unpacked()
    arr = np.asarray(plane)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("bit vector must contain only 0/1")
    return arr.astype(np.uint8)


def lpc_scan(slice_bits, sawl_max: int = 8, offset: int = 0) -> LpcResult:
    """Mark maximal runs containing exactly `sawl_max` ones, in order.

    Returns global positions (local position + offset).  The tail group
    with fewer than sawl_max ones is reported separately for merging.
    """
    bits = _as_bits(slice_bits)
    ones = np.flatnonzero(bits) + offset
    p = int(ones.size)
    full = tuple(
        tuple(int(i) for i in ones[k : k + sawl_max])
        for k in range(0, p - p % sawl_max, sawl_max)
    )
    remainder = tuple(int(i) for i in ones[p - p % sawl_max :])
    return LpcResult(popcount=p, full_groups=full, remainder=remainder)


def gpc_pack(lpc_results: list[LpcResult], cfg: BitSiftConfig) -> SliceSchedule:
    """Merge slice results into fixed-width segments.

    Full groups pass through one per cycle.  Remainder groups accumulate in
    slice order while their joint count stays within sawl_max; a group that
    would overflow closes the pending segment (dummy-padded) and starts the
    next one.
    """
    sawl = cfg.sawl_max
    segments: list[ComputeSegment] = []
    pending: list[int] = []

    def flush():
        if pending:
            segments.append(
                ComputeSegment(
                    wl_indices=tuple(pending), dummy_count=sawl - len(pending)
                )
            )
            pending.clear()

    for res in lpc_results:
        if len(res.remainder) >= sawl:
            raise ValueError("remainder group must have fewer than sawl_max ones")
        for group in res.full_groups:
            segments.append(ComputeSegment(wl_indices=group, dummy_count=0))
        if res.remainder:
            if len(pending) + len(res.remainder) > sawl:
                flush()
            pending.extend(res.remainder)
    flush()
    return SliceSchedule(segments=tuple(segments), sawl_max=sawl)


def schedule_bitplane(plane, cfg: BitSiftConfig) -> SliceSchedule:
    """lpc_scan over consecutive slices, then gpc_pack.

    An all-zero plane yields an empty schedule: its partial sum is exactly
    zero, so no cycle is spent.
    """
    bits = _as_bits(plane)
    if cfg.wl_count is not None and bits.size > cfg.wl_count:
        raise ValueError(
            f"plane length {bits.size} exceeds array WL count {cfg.wl_count}"
        )
    results = [
        lpc_scan(bits[s : s + cfg.slice_len], cfg.sawl_max, offset=s)
        for s in range(0, bits.size, cfg.slice_len)
    ]
    return gpc_pack(results, cfg)


def boost_factor(schedule: SliceSchedule, d: int, cfg: BitSiftConfig) -> float:
    """Speedup over the dense fixed-length baseline of ceil(d/sawl) cycles.

    Zero planes are skipped entirely, which counts as the full baseline
    ratio.
    """
    baseline = -(-d // cfg.sawl_max)
    if schedule.cycles == 0:
        return float(baseline)
    return baseline / schedule.cycles


def dense_gemm_cycles(d: int, n: int, bp: int, unit_len: int = 8) -> int:
    """Baseline segmented GEMM cost: ceil(d/unit_len) bit-GEMV cycles per
    plane, for n tokens at bp bit planes each."""
    return (-(-d // unit_len)) * n * bp


def dump_schedule(schedule: SliceSchedule) -> str:
    """Debug dump: JSON lines, one segment per line."""
    import json

    lines = []
    for cycle, seg in enumerate(schedule.segments):
        lines.append(
            json.dumps(
                {
                    "cycle": cycle,
                    "wl_indices": list(seg.wl_indices),
                    "dummy_count": seg.dummy_count,
                }
            )
        )
    return "\n".join(lines)
