"""Behavioral model of the analog PiM arrays.

A stored matrix is bit-sliced across bit lines; an activation segment
drives up to sawl_max word lines at once and every bit line produces the
popcount of its on-cells among the driven rows, digitized by a low-ENOB
ADC.  The only analog imperfection modeled is per-on-cell Gaussian current
spread; off-cells (including the dummy padding rows) contribute exactly
zero.  Dummy rows are physically present at the bottom of the array with
all cells zero, so activating them never perturbs a sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bitsift import ComputeSegment, SliceSchedule
from .tensor import BitPlane


@dataclass(frozen=True)
class AdcModel:
    """ADC abstraction: decision levels 0..sawl_max at half-integer
    boundaries, energy proportional to 2**enob."""

    enob: int = 4
    sawl_max: int = 8
    sigma_cell: float = 0.029

    def __post_init__(self):
        need = math.ceil(math.log2(self.sawl_max + 1))
        if self.enob < need:
            raise ValueError(
                f"enob {self.enob} cannot resolve {self.sawl_max + 1} levels "
                f"(need >= {need})"
            )
        if self.sigma_cell < 0:
            raise ValueError("sigma_cell must be nonnegative")

    @property
    def levels(self) -> int:
        """Decision set size: integer levels 0..sawl_max."""
        return self.sawl_max + 1

    @property
    def energy_cost(self) -> float:
        # relative to a 4-bit conversion
        return 2.0**self.enob / 2.0**4


@dataclass(frozen=True)
class PimArray:
    """One memory array holding a bit-sliced integer matrix.

    The logical matrix is [fetch_len, filters] with `bits`-bit two's
    complement entries; physically the cells form
    [fetch_len + dummy_rows, filters * bits] binary cells where column
    f * bits + j holds bit j of filter f.
    """

    kind: str
    weights: np.ndarray
    bits: int
    dummy_rows: int = 7
    write_cost: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mram", "sram"):
            raise ValueError(f"kind must be mram or sram, got {self.kind!r}")
        w = np.asarray(self.weights, dtype=np.int64)
        if w.ndim != 2:
            raise ValueError("weights must be 2-D [fetch_len, filters]")
        lo, hi = -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1
        if w.size and (w.min() < lo or w.max() > hi):
            raise OverflowError(f"weights exceed {self.bits}-bit range")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        cells = np.zeros(
            (w.shape[0] + self.dummy_rows, w.shape[1] * self.bits), dtype=np.uint8
        )
        for j in range(self.bits):
            cells[: w.shape[0], j :: self.bits] = (w >> j) & 1
        cells.setflags(write=False)
        object.__setattr__(self, "_cells", cells)

    @property
    def fetch_len(self) -> int:
        return self.weights.shape[0]

    @property
    def filters(self) -> int:
        return self.weights.shape[1]

    @property
    def rows(self) -> int:
        return self.fetch_len + self.dummy_rows

    @property
    def cols(self) -> int:
        return self.filters * self.bits

    @property
    def cells(self) -> np.ndarray:
        return self._cells

    @property
    def write_events(self) -> int:
        """Cell writes needed to load this matrix (one per stored bit)."""
        return self.fetch_len * self.cols


@dataclass(frozen=True)
class MCResult:
    sawl: int
    trials: int
    errors: int

    @property
    def error_rate(self) -> float:
        return self.errors / self.trials

    def sigma_equivalent(self, sigma_cell: float) -> float:
        """Worst-case margin in Gaussian sigmas: half an LSB against the
        spread of sawl fluctuating on-cells."""
        if sigma_cell == 0:
            return math.inf
        return 0.5 / (sigma_cell * math.sqrt(self.sawl))


def sigma_equivalent(sigma_cell: float, sawl: int) -> float:
    if sigma_cell == 0:
        return math.inf
    return 0.5 / (sigma_cell * math.sqrt(sawl))


def _snap(analog: np.ndarray, sawl_max: int) -> np.ndarray:
    return np.clip(np.rint(analog), 0, sawl_max).astype(np.int64)


def column_sum(
    segment: ComputeSegment,
    column_bits: np.ndarray,
    adc: AdcModel,
    noise_on: bool = False,
    rng: np.random.Generator | None = None,
) -> int:
    """Digitized popcount of one bit line under one activation segment.

    Each driven on-cell contributes 1 + N(0, sigma_cell); dummy rows add
    nothing.  The analog value snaps to the nearest level in
    [0, sawl_max].
    """
    if segment.width != adc.sawl_max:
        raise ValueError(
            f"segment width {segment.width} != sawl_max {adc.sawl_max}"
        )
    active = np.asarray(column_bits)[list(segment.wl_indices)]
    ideal = int(active.sum())
    if not noise_on or adc.sigma_cell == 0 or ideal == 0:
        return ideal
    if rng is None:
        raise ValueError("rng required when noise is on")
    analog = ideal + rng.normal(0.0, adc.sigma_cell * math.sqrt(ideal))
    return int(_snap(np.asarray(analog), adc.sawl_max))


def _segment_counts(
    schedule: SliceSchedule,
    cells: np.ndarray,
    adc: AdcModel,
    noise_on: bool,
    rng: np.random.Generator | None,
) -> np.ndarray:
    """Column sums for every segment of a schedule, [segments, cols]."""
    if schedule.cycles == 0:
        return np.zeros((0, cells.shape[1]), dtype=np.int64)
    wls = np.concatenate([np.asarray(s.wl_indices) for s in schedule.segments])
    starts = np.cumsum([0] + [len(s.wl_indices) for s in schedule.segments])[:-1]
    gathered = cells[wls, :].astype(np.int64)
    counts = np.add.reduceat(gathered, starts, axis=0)
    if noise_on and adc.sigma_cell > 0:
        if rng is None:
            raise ValueError("rng required when noise is on")
        noise = rng.standard_normal(counts.shape) * (
            adc.sigma_cell * np.sqrt(counts)
        )
        counts = _snap(counts + noise, adc.sawl_max)
    return counts


def gemv_bitserial(
    input_planes: list[BitPlane],
    array: PimArray,
    filter_count: int,
    schedules: list[SliceSchedule],
    adc: AdcModel,
    noise_on: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Partial-sum grid [input_bits, weight_bits, filters].

    psum[i, j, f] accumulates the digitized column sums of weight plane j
    of filter f over the segments scheduled for input plane i.  Noise-free
    this equals the exact popcount of plane_i AND weight_plane_j(f).
    """
    if filter_count != array.filters:
        raise ValueError(
            f"filter_count {filter_count} != array filters {array.filters}"
        )
    if len(input_planes) != len(schedules):
        raise ValueError("one schedule per input plane required")
    ibp = len(input_planes)
    psums = np.zeros((ibp, array.bits, array.filters), dtype=np.int64)
    for plane, sched in zip(input_planes, schedules):
        if plane.length > array.fetch_len:
            raise ValueError(
                f"plane length {plane.length} exceeds array fetch length "
                f"{array.fetch_len}"
            )
        counts = _segment_counts(sched, array.cells, adc, noise_on, rng)
        total = counts.sum(axis=0)
        psums[plane.bit_index] = total.reshape(array.filters, array.bits).T
    return psums


def shift_add_recombine(
    psums: np.ndarray, ibp: int, wbp: int, acc_width: int | None = None
) -> np.ndarray:
    """Two's-complement weighting of the partial-sum grid.

    out[f] = sum_ij w(i) * w(j) * psum[i, j, f] with w(k) = 2**k except the
    sign planes, which contribute -2**(bits-1).
    """
    psums = np.asarray(psums, dtype=np.int64)
    if psums.shape[:2] != (ibp, wbp):
        raise ValueError(f"psum grid {psums.shape} does not match {ibp}x{wbp}")
    wi = np.array(
        [-(1 << (ibp - 1)) if i == ibp - 1 else (1 << i) for i in range(ibp)],
        dtype=np.int64,
    )
    wj = np.array(
        [-(1 << (wbp - 1)) if j == wbp - 1 else (1 << j) for j in range(wbp)],
        dtype=np.int64,
    )
    out = np.einsum("i,j,ijf->f", wi, wj, psums)
    if acc_width is not None:
        lo, hi = -(1 << (acc_width - 1)), (1 << (acc_width - 1)) - 1
        if out.size and (out.min() < lo or out.max() > hi):
            raise OverflowError(
                f"recombined output exceeds declared {acc_width}-bit accumulator"
            )
    return out


def analytic_miscode_rate(sigma_cell: float, sawl: int) -> float:
    """Mean miscode probability over uniform true counts in [0, sawl].

    Interior counts can miscode on both sides of the level; the top count
    only downward (the snap clamps at sawl) and zero never (no on-cells,
    no noise).
    """
    if sigma_cell == 0:
        return 0.0

    def tail(z: float) -> float:
        return 0.5 * math.erfc(z / math.sqrt(2.0))

    total = 0.0
    for t in range(1, sawl + 1):
        z = 0.5 / (sigma_cell * math.sqrt(t))
        total += tail(z) if t == sawl else 2.0 * tail(z)
    return total / (sawl + 1)


def monte_carlo_sawl(
    sigma_cell: float,
    sawl_range,
    trials: int,
    seed: int = 0,
    chunk: int = 1 << 20,
) -> list[MCResult]:
    """Empirical miscode rates per SAWL under the cell-current noise model.

    True counts are drawn uniformly in [0, sawl], perturbed by
    N(0, sigma_cell * sqrt(count)), and snapped to the nearest level.
    Streams are keyed by (seed, sawl, chunk index), so results do not
    depend on evaluation order.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    out = []
    for sawl in sawl_range:
        errors = 0
        done = 0
        chunk_idx = 0
        while done < trials:
            size = min(chunk, trials - done)
            rng = np.random.default_rng([seed, sawl, chunk_idx])
            t = rng.integers(0, sawl + 1, size=size)
            if sigma_cell > 0:
                noise = rng.standard_normal(size) * (sigma_cell * np.sqrt(t))
                snapped = _snap(t + noise, sawl)
                errors += int((snapped != t).sum())
            done += size
            chunk_idx += 1
        out.append(MCResult(sawl=int(sawl), trials=trials, errors=errors))
    return out


def mc_results_csv(results: list[MCResult], sigma_cell: float) -> str:
    lines = ["sawl,trials,errors,error_rate,sigma_equivalent"]
    for r in results:
        lines.append(
            f"{r.sawl},{r.trials},{r.errors},{r.error_rate:.6e},"
            f"{r.sigma_equivalent(sigma_cell):.4f}"
        )
    return "\n".join(lines) + "\n"
