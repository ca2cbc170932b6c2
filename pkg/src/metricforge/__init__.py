"""Mahalanobis metric learning from pairwise constraints.

Two learners share one pipeline: constraints are built from labeled data,
reduced to difference vectors and a pair kernel, and a PSD metric matrix is
trained by alternating dual QP solves.  The evaluate module benchmarks
learned metrics with stratified cross-validation and pair verification, and
the cli module exposes the whole flow as the `metricforge` command.
"""

from .errors import (
    ConvergenceError,
    DataFormatError,
    GramSizeError,
    MetricForgeError,
    ModelFormatError,
    ModelIntegrityError,
    NumericalError,
    StratificationError,
)
from .evaluate import (
    CvReport,
    PcaTransform,
    RocReport,
    kfold_cv,
    pca_fit_transform,
    stratified_folds,
    verify_pairs,
)
from .linalg import EigenDecomp, frob_inner, psd_project, sym_eig
from .model import MetricModel, ModelMeta, load
from .ncml import NcmlConfig, NcmlState, train_ncml
from .pairs import (
    Dataset,
    PairConstraint,
    PairGram,
    PairSet,
    build_constraints,
    gram,
    pair_kernel,
)
from .pcml import (
    PcmlConfig,
    PcmlState,
    TraceRow,
    TrainTrace,
    pcml_bias_and_slacks,
    pcml_duality_gap,
    train_pcml,
)
from .qp import (
    BoxEqQp,
    BoxEqSolution,
    NonnegQp,
    NonnegSolution,
    solve_box_eq,
    solve_nonneg,
)

__version__ = "0.1.0"

__all__ = [
    "BoxEqQp", "BoxEqSolution", "ConvergenceError", "CvReport",
    "DataFormatError", "Dataset", "EigenDecomp", "GramSizeError",
    "MetricForgeError", "MetricModel", "ModelFormatError",
    "ModelIntegrityError", "ModelMeta", "NcmlConfig", "NcmlState",
    "NonnegQp", "NonnegSolution", "NumericalError", "PairConstraint",
    "PairGram", "PairSet", "PcaTransform", "PcmlConfig", "PcmlState",
    "RocReport", "StratificationError", "TraceRow", "TrainTrace",
    "build_constraints", "frob_inner", "gram", "kfold_cv", "load",
    "pair_kernel", "pca_fit_transform", "pcml_bias_and_slacks",
    "pcml_duality_gap", "psd_project", "solve_box_eq", "solve_nonneg",
    "stratified_folds", "sym_eig", "train_ncml", "train_pcml",
    "verify_pairs",
]
