"""Learned predictors that narrow a lower-bound search to an interval."""

from .atomic import AtomicModel, constant_model, predict_atomic, train_atomic
from .base import (
    FullRange,
    ModelError,
    Predictor,
    composed_batch,
    composed_checksum,
    lookup,
    predict_many,
)
from .epsilon import (
    BiCriteriaConfig,
    BudgetError,
    PgmIndex,
    PlaSegment,
    RadixSplineIndex,
    bicriteria_pgm,
    build_pgm,
    build_pla,
    build_radix_spline,
    query_pgm,
    query_radix_spline,
)
from .hybrid import KoModel, predict_ko, train_ko
from .rmi import (
    RmiCandidate,
    RmiCandidateSet,
    RmiModel,
    SyRmiSpec,
    build_candidate_grid,
    instantiate_sy_rmi,
    mine_sy_rmi,
    predict_rmi,
    train_rmi,
)

__all__ = [
    "AtomicModel",
    "BiCriteriaConfig",
    "BudgetError",
    "FullRange",
    "KoModel",
    "ModelError",
    "PgmIndex",
    "PlaSegment",
    "Predictor",
    "RadixSplineIndex",
    "RmiCandidate",
    "RmiCandidateSet",
    "RmiModel",
    "SyRmiSpec",
    "bicriteria_pgm",
    "build_candidate_grid",
    "build_pgm",
    "build_pla",
    "build_radix_spline",
    "composed_batch",
    "composed_checksum",
    "constant_model",
    "instantiate_sy_rmi",
    "lookup",
    "mine_sy_rmi",
    "predict_atomic",
    "predict_ko",
    "predict_many",
    "predict_rmi",
    "query_pgm",
    "query_radix_spline",
    "train_atomic",
    "train_ko",
    "train_rmi",
]
