"""Temporal clinical graph integrity toolkit.

Models timestamped relational records as a typed temporal graph, induces a
soft first-order grammar of valid interactions, scores each record by the
marginal codelength its clause outcomes add, and proposes minimal repairs
for records that violate the grammar, with a review service for
human-in-the-loop resolution.
"""

from .errors import MedgraphError
from .graph import ClinicalGraph, GraphStats
from .healer import RepairCandidate, apply_repair, repair_candidates
from .induce import TemplateConfig, compression_gain, induce
from .logic import Clause, Grammar, SatResult, consistency_score, crisp_sat, parse_clause, soft_sat
from .mdl import (
    AnomalyReport,
    MdlBreakdown,
    anomaly_score,
    calibrate_threshold,
    clause_cost,
    data_cost,
    grammar_cost,
    score_all,
    total_mdl,
    universal_int,
)
from .schema import AttrSpec, Schema, load_schema, save_schema
from .synth import CorpusConfig, GroundTruth, export_corpus, generate, standard_config, standard_schema
from .trainer import TrainConfig, TrainHistory, grad_check, train

__version__ = "0.1.0"

__all__ = [
    "AnomalyReport",
    "AttrSpec",
    "ClinicalGraph",
    "Clause",
    "CorpusConfig",
    "Grammar",
    "GraphStats",
    "GroundTruth",
    "MdlBreakdown",
    "MedgraphError",
    "RepairCandidate",
    "SatResult",
    "Schema",
    "TemplateConfig",
    "TrainConfig",
    "TrainHistory",
    "anomaly_score",
    "apply_repair",
    "calibrate_threshold",
    "clause_cost",
    "compression_gain",
    "consistency_score",
    "crisp_sat",
    "data_cost",
    "export_corpus",
    "generate",
    "grad_check",
    "grammar_cost",
    "induce",
    "load_schema",
    "parse_clause",
    "repair_candidates",
    "save_schema",
    "score_all",
    "soft_sat",
    "standard_config",
    "standard_schema",
    "total_mdl",
    "train",
    "universal_int",
]
