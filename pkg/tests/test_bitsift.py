"""Scheduler correctness: coverage, capacity, and packing bounds."""

import numpy as np
import pytest

from amspim.bitsift import (
    BitSiftConfig,
    ComputeSegment,
    LpcResult,
    SliceSchedule,
    boost_factor,
    dense_gemm_cycles,
    dump_schedule,
    gpc_pack,
    lpc_scan,
    schedule_bitplane,
)


def bits(length, ones):
    v = np.zeros(length, dtype=np.uint8)
    v[list(ones)] = 1
    return v


def optimal_sequential_cycles(group_sizes, cap=8):
    # DP oracle: minimal number of consecutive runs with run-sum <= cap
    if not group_sizes:
        return 0
    n = len(group_sizes)
    best = [0] + [None] * n
    for i in range(1, n + 1):
        total = 0
        for j in range(i, 0, -1):
            total += group_sizes[j - 1]
            if total > cap:
                break
            cand = best[j - 1] + 1
            if best[i] is None or cand < best[i]:
                best[i] = cand
    return best[n]


def test_config_validation():
    BitSiftConfig()
    with pytest.raises(ValueError):
        BitSiftConfig(dummy_rows=6)
    with pytest.raises(ValueError):
        BitSiftConfig(slice_len=4)


def test_lpc_all_zero():
    res = lpc_scan(bits(64, []))
    assert res.popcount == 0 and not res.full_groups and not res.remainder


def test_lpc_single_full_group():
    res = lpc_scan(bits(64, range(8)))
    assert res.popcount == 8
    assert res.full_groups == ((0, 1, 2, 3, 4, 5, 6, 7),)
    assert res.remainder == ()


def test_lpc_nineteen_ones_split_points():
    ones = sorted({3 * i + 1 for i in range(19)})
    res = lpc_scan(bits(64, ones))
    assert res.popcount == 19
    assert len(res.full_groups) == 2
    assert res.full_groups[0] == tuple(ones[:8])
    assert res.full_groups[1] == tuple(ones[8:16])
    assert res.remainder == tuple(ones[16:])


def test_lpc_offset_applies():
    res = lpc_scan(bits(64, [0, 5]), offset=128)
    assert res.remainder == (128, 133)


def test_gpc_merge_seven_one():
    cfg = BitSiftConfig()
    results = [
        LpcResult(7, (), tuple(range(7))),
        LpcResult(1, (), (64,)),
    ]
    sched = gpc_pack(results, cfg)
    assert sched.cycles == 1
    assert sched.segments[0].dummy_count == 0
    assert sched.segments[0].wl_indices == (0, 1, 2, 3, 4, 5, 6, 64)


def test_gpc_overflow_splits_seven_two():
    cfg = BitSiftConfig()
    results = [
        LpcResult(7, (), tuple(range(7))),
        LpcResult(2, (), (64, 65)),
    ]
    sched = gpc_pack(results, cfg)
    assert sched.cycles == 2
    assert sched.segments[0].dummy_count == 1
    assert sched.segments[1].dummy_count == 6


def test_gpc_full_groups_pass_through():
    cfg = BitSiftConfig()
    results = [
        LpcResult(8, (tuple(range(8)),), ()),
        LpcResult(8, (tuple(range(64, 72)),), ()),
        LpcResult(8, (tuple(range(128, 136)),), ()),
    ]
    sched = gpc_pack(results, cfg)
    assert sched.cycles == 3
    assert sched.dummy_activations == 0


def test_gpc_rejects_oversize_remainder():
    cfg = BitSiftConfig()
    with pytest.raises(ValueError):
        gpc_pack([LpcResult(8, (), tuple(range(8)))], cfg)


def test_schedule_37_ones_five_cycles():
    cfg = BitSiftConfig()
    sched = schedule_bitplane(bits(1024, range(37)), cfg)
    assert sched.cycles == 5
    assert sched.popcount == 37
    assert sched.dummy_activations == 5 * 8 - 37
    assert boost_factor(sched, 1024, cfg) == pytest.approx(128 / 5)


def test_schedule_dense_plane_128_cycles():
    cfg = BitSiftConfig()
    sched = schedule_bitplane(np.ones(1024, dtype=np.uint8), cfg)
    assert sched.cycles == 128
    assert sched.dummy_activations == 0
    assert boost_factor(sched, 1024, cfg) == 1.0


def test_schedule_zero_plane_skipped():
    cfg = BitSiftConfig()
    sched = schedule_bitplane(np.zeros(1024, dtype=np.uint8), cfg)
    assert sched.cycles == 0
    assert boost_factor(sched, 1024, cfg) == 128.0


def test_schedule_capacity_bound():
    cfg = BitSiftConfig(wl_count=64)
    schedule_bitplane(bits(64, [1]), cfg)
    with pytest.raises(ValueError):
        schedule_bitplane(bits(65, [1]), cfg)


def test_schedule_deterministic():
    cfg = BitSiftConfig()
    rng = np.random.default_rng(1)
    plane = (rng.random(512) < 0.3).astype(np.uint8)
    a = schedule_bitplane(plane, cfg)
    b = schedule_bitplane(plane, cfg)
    assert a == b


def test_coverage_and_bounds_random():
    cfg = BitSiftConfig()
    rng = np.random.default_rng(2)
    for _ in range(300):
        length = int(rng.integers(8, 1024))
        density = float(rng.uniform(0.001, 1.0))
        plane = (rng.random(length) < density).astype(np.uint8)
        sched = schedule_bitplane(plane, cfg)
        ones = set(np.flatnonzero(plane))
        # exact coverage, each '1' exactly once
        assert sched.covered_positions() == ones
        assert sched.popcount == len(ones)
        p = len(ones)
        lo = -(-p // 8)
        assert lo <= sched.cycles <= 2 * lo + 1
        for seg in sched.segments:
            assert seg.width == 8


def test_greedy_matches_optimal_sequential_packer():
    # remainder-group packing is the classic consecutive-partition problem:
    # greedy fill is optimal there
    cfg = BitSiftConfig(slice_len=8)
    rng = np.random.default_rng(3)
    for _ in range(200):
        length = int(rng.integers(8, 256))
        plane = (rng.random(length) < rng.uniform(0.05, 0.9)).astype(np.uint8)
        sched = schedule_bitplane(plane, cfg)
        groups, full = [], 0
        for s in range(0, length, cfg.slice_len):
            res = lpc_scan(plane[s : s + cfg.slice_len], 8, offset=s)
            full += len(res.full_groups)
            if res.remainder:
                groups.append(len(res.remainder))
        assert sched.cycles == full + optimal_sequential_cycles(groups)


def test_cycles_track_sparsity_levels():
    # slice-ordered greedy is not per-bit monotone (clearing one '1' can
    # split a merged remainder), but cycle counts order with density
    cfg = BitSiftConfig()
    rng = np.random.default_rng(4)
    for _ in range(50):
        u = rng.random(1024)
        counts = [
            schedule_bitplane((u < d).astype(np.uint8), cfg).cycles
            for d in (0.1, 0.3, 0.6, 0.9)
        ]
        assert counts == sorted(counts)


def test_single_slice_equality():
    # all ones inside one slice: cycles == ceil(p/8) exactly
    cfg = BitSiftConfig()
    rng = np.random.default_rng(5)
    for p in (1, 7, 8, 9, 16, 23, 64):
        positions = rng.choice(64, size=p, replace=False)
        sched = schedule_bitplane(bits(256, positions), cfg)
        assert sched.cycles == -(-p // 8)


def test_dense_gemm_cycle_formula():
    assert dense_gemm_cycles(1024, 512, 8, 8) == 524_288
    assert dense_gemm_cycles(1024, 1, 1, 8) == 128


def test_dump_schedule_json_lines():
    import json

    cfg = BitSiftConfig()
    sched = schedule_bitplane(bits(64, range(10)), cfg)
    lines = dump_schedule(sched).splitlines()
    assert len(lines) == sched.cycles
    rec = json.loads(lines[0])
    assert set(rec) == {"cycle", "wl_indices", "dummy_count"}


def test_segment_validation():
    with pytest.raises(ValueError):
        ComputeSegment(wl_indices=(3, 2), dummy_count=6)
    seg = ComputeSegment(wl_indices=(1, 2), dummy_count=6)
    with pytest.raises(ValueError):
        SliceSchedule(segments=(seg, seg), sawl_max=8)  # reused indices
    with pytest.raises(ValueError):
        SliceSchedule(
            segments=(ComputeSegment(wl_indices=(1,), dummy_count=3),),
            sawl_max=8,
        )
