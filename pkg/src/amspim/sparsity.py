"""Activation sparsity at four granularities, from bits to value groups.

The scheduler only exploits single-bit zeros, so the bitwise fraction
directly predicts its speedup; the coarser metrics exist to show how much
sparsity the usual word- or group-level schemes would see on the same
tensor.  Grouped metrics run down the token axis (rows of an [N, D]
activation), matching how columns line up in the array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import IntTensor, bit_decompose


@dataclass(frozen=True)
class SparsityReport:
    bitwise: float
    valuewise: float
    n_valuewise: float
    n_column_bitslice: float
    n_group: int
    bp: int

    def __post_init__(self):
        for name in ("bitwise", "valuewise", "n_valuewise", "n_column_bitslice"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @property
    def predicted_boost(self) -> float:
        """1 / (1 - bitwise); inf when every bit is zero (skip-all)."""
        if self.bitwise >= 1.0:
            return math.inf
        return 1.0 / (1.0 - self.bitwise)

    def rows(self) -> list[tuple[str, int, float]]:
        return [
            ("bitwise", 1, self.bitwise),
            ("valuewise", 1, self.valuewise),
            ("n_valuewise", self.n_group, self.n_valuewise),
            ("n_column_bitslice", self.n_group, self.n_column_bitslice),
        ]


def _to_matrix(tensor) -> np.ndarray:
    if isinstance(tensor, IntTensor):
        arr = tensor.data.astype(np.int64)
    else:
        arr = np.asarray(tensor, dtype=np.int64)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    return arr.reshape(-1, arr.shape[-1])


def _pad_rows(mat: np.ndarray, group: int) -> np.ndarray:
    # ragged tails pad with zero rows; padded positions count as zero
    short = (-mat.shape[0]) % group
    if short:
        mat = np.vstack([mat, np.zeros((short, mat.shape[1]), dtype=mat.dtype)])
    return mat


def profile(tensor, bp: int, n_group: int = 8) -> SparsityReport:
    """Measure all four sparsity fractions of an activation tensor.

    The tensor is viewed as [tokens, features]; leading axes flatten into
    the token axis.  bp is the bit width used for the plane decomposition.
    """
    if n_group < 1:
        raise ValueError("n_group must be >= 1")
    mat = _to_matrix(tensor)
    tokens, feats = mat.shape
    flat = mat.reshape(-1)

    planes = bit_decompose(flat, bp)
    zero_bits = sum(int((p.unpacked() == 0).sum()) for p in planes)
    bitwise = zero_bits / (flat.size * bp) if flat.size else 1.0

    valuewise = float((flat == 0).mean()) if flat.size else 1.0

    padded = _pad_rows(mat, n_group)
    groups = padded.reshape(-1, n_group, feats)
    n_valuewise = float((groups == 0).all(axis=1).mean()) if groups.size else 1.0

    plane_fracs = []
    for p in planes:
        bits = p.unpacked().reshape(tokens, feats)
        gb = _pad_rows(bits, n_group).reshape(-1, n_group, feats)
        plane_fracs.append(float((gb == 0).all(axis=1).mean()) if gb.size else 1.0)
    n_column_bitslice = float(np.mean(plane_fracs))

    return SparsityReport(
        bitwise=bitwise,
        valuewise=valuewise,
        n_valuewise=n_valuewise,
        n_column_bitslice=n_column_bitslice,
        n_group=n_group,
        bp=bp,
    )


def predict_boost(report: SparsityReport) -> float:
    return report.predicted_boost


def report_csv(reports: dict[str, SparsityReport]) -> str:
    """One row per (layer tag, metric, group, value); plot-ready."""
    lines = ["layer,metric,n_group,value"]
    for tag, rep in reports.items():
        for metric, group, value in rep.rows():
            lines.append(f"{tag},{metric},{group},{value:.6f}")
        lines.append(f"{tag},predicted_boost,1,{rep.predicted_boost:.6f}")
    return "\n".join(lines) + "\n"
