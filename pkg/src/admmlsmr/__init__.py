"""Gradient-free feed-forward network training with a fixed-point LSMR core."""

from .fixedpoint import (
    DETERMINISTIC_MODES,
    FIXED16,
    FIXED32,
    FixedFormat,
    FixedFormatError,
    FixedWord,
    RoundingMode,
    SaturationStats,
    add_f,
    cast_wide,
    cast_wide_simple,
    convert,
    divide_f,
    float_sqrt,
    integer_sqrt,
    make_stream,
    multiply_f,
    neg_f,
    sub_f,
    value_of,
)
from .matrix import (
    FixedMatrix,
    add_fixed,
    add_mat,
    dequantize_matrix,
    dot_fixed,
    mat_mul_fixed,
    mat_mul_real,
    norm_fixed,
    quantize_matrix,
    scale,
    scale_fixed,
    sub_fixed,
    sub_mat,
    transpose,
    transpose_fixed,
)
from .lsmr import (
    LsmrJob,
    LsmrScratch,
    lsmr_solve,
    lsmr_solve_fixed,
    lsmr_solve_multi,
    split_ranges,
    sym,
    sym_fixed,
)
from .admm import (
    IterationTimings,
    NetworkConfig,
    NetworkState,
    SolveEngine,
    TrainReport,
    TrainingDivergedError,
    accuracy,
    activation_update,
    init_network,
    lagrangian_update,
    predict,
    train,
    weight_update,
    z_update_hidden,
    z_update_output,
)
from .data import (
    DataError,
    Dataset,
    Split,
    add_bias_feature,
    iris_path,
    load_csv,
    one_hot,
    split,
    standardize,
    subsample,
    synthetic_blobs,
)

__version__ = "0.1.0"
