"""Tensor cross interpolation of entanglement features."""
from .analysis import EFRecord, distance_matrix, ef_distance, global_relative_error, learn_ef, stress_layout
from .cross import IndexSpace, PivotState, TciOptions, TciResult, tci_learn, ttopt_max
from .disentangle import best_split, disentangle
from .oracles import (
    MPS,
    DensePurity,
    DenseState,
    FermionPurity,
    FermionState,
    HaarAnalyticPurity,
    MPSPurity,
    Partition,
    fixed_size_decode,
    mps_ef_build,
)
from .tt import TensorTrain, tt_eval, tt_inner

__version__ = "0.1.0"
