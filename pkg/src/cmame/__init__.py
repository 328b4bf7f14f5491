"""Covariance-matrix-adaptation MAP-Elites and quality-diversity baselines."""

from cmame.archive import BehaviorBounds, Elite, GridArchive, InsertResult, InsertStatus
from cmame.baselines import CmaEsBaseline, CmaEsConfig, MapElites, MapElitesConfig
from cmame.benchmarks import ToyDomain, bates_narrowing_report
from cmame.emitters import (
    CmaMeConfig,
    ImprovementEmitter,
    OptimizingEmitter,
    RandomDirectionEmitter,
    Scheduler,
    run_cma_me,
)
from cmame.evaluation import EvaluatedBatch

__version__ = "0.1.0"

__all__ = [
    "BehaviorBounds",
    "CmaEsBaseline",
    "CmaEsConfig",
    "CmaMeConfig",
    "Elite",
    "EvaluatedBatch",
    "GridArchive",
    "ImprovementEmitter",
    "InsertResult",
    "InsertStatus",
    "MapElites",
    "MapElitesConfig",
    "OptimizingEmitter",
    "RandomDirectionEmitter",
    "Scheduler",
    "ToyDomain",
    "bates_narrowing_report",
    "run_cma_me",
]
