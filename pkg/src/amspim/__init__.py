"""Bit-accurate functional and performance model of an integer-only
analog-PiM self-attention accelerator."""

from .tensor import (
    BitPlane,
    IntTensor,
    ModelShape,
    PrecisionConfig,
    bit_decompose,
    bit_recompose,
    gen_tensor,
    load_tensor,
    save_tensor,
)
from .quant import (
    EmsbInfo,
    QuantizedToken,
    TokenScaleTracker,
    default_acc_width,
    emsb,
    emsb_quantize,
    msb_parse_quantize,
    token_emsb,
)
from .softmax import (
    SoftmaxConfig,
    SoftmaxLUT,
    build_lut,
    deserialize_lut,
    vdr_iexp,
    vdr_ipoly,
    vdr_norm,
)
from .bitsift import (
    BitSiftConfig,
    ComputeSegment,
    SliceSchedule,
    boost_factor,
    dense_gemm_cycles,
    gpc_pack,
    lpc_scan,
    schedule_bitplane,
)
from .array import (
    AdcModel,
    MCResult,
    PimArray,
    column_sum,
    gemv_bitserial,
    monte_carlo_sawl,
    shift_add_recombine,
)
from .sparsity import SparsityReport, predict_boost, profile
from .pipeline import (
    AttentionConfig,
    CostReport,
    RunResult,
    TrafficReport,
    WeightSet,
    fp_reference,
    gen_weights,
    run_attention,
    traffic_original,
    traffic_revised,
)

__version__ = "0.1.0"
