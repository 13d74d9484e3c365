"""Tensor-train solvers that re-estimate particle ensembles by sketching."""

from .tt_core import (
    MatrixProductOperator,
    StructureError,
    TensorTrain,
    mpo_apply,
    rank1_tt,
    random_tt,
    tt_add,
    tt_eval,
    tt_hadamard,
    tt_inner,
    tt_marginalize,
    tt_norm2,
    tt_round,
)
from .sketch import (
    SketchFamily,
    accumulate_moments,
    estimate_tt_from_particles,
    make_cluster_sketch,
    make_random_sketch,
    solve_cores,
)

__version__ = "0.1.0"
