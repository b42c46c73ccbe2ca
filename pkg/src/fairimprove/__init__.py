"""Repeated-split bootstrap tests of whether a decision rule can be improved
in accuracy for two groups and in fairness between them."""

__version__ = "0.1.0"

from .data import ColumnThreshold, Constant, Dataset, LinearClassifier, Schema, ScoreThreshold, load_csv, write_csv
from .errors import (
    AllRoundsFailed,
    ConfigError,
    DataError,
    FairImproveError,
    Infeasible,
    SelectionFailure,
)
from .improvement import DeltaTriple, run_single_split
from .milp import MilpModel, SolverLimits, solve_lp, solve_milp
from .procedure import ProcedureConfig, ProcedureResult, delta_sweep, run_procedure
from .selection import (
    Identity,
    LassoThreshold,
    MilpAccuracy,
    MilpFairness,
    OlsThreshold,
    rule_from_mapping,
)
from .simulation import gen_synthetic, run_game, run_power_curve, synthetic_status_quo, verify_bounds
from .utility import Calibration, ClassificationRate, FalsePositiveRate, Profit, UtilitySpec

__all__ = [
    "__version__",
    "AllRoundsFailed", "Calibration", "ClassificationRate", "ColumnThreshold", "ConfigError", "Constant",
    "DataError", "Dataset", "DeltaTriple", "FairImproveError", "FalsePositiveRate", "Identity", "Infeasible",
    "LassoThreshold", "LinearClassifier", "MilpAccuracy", "MilpFairness", "MilpModel", "OlsThreshold",
    "ProcedureConfig", "ProcedureResult", "Profit", "Schema", "ScoreThreshold", "SelectionFailure",
    "SolverLimits", "UtilitySpec", "delta_sweep", "gen_synthetic", "load_csv", "rule_from_mapping",
    "run_game", "run_power_curve", "run_procedure", "run_single_split", "solve_lp", "solve_milp",
    "synthetic_status_quo", "verify_bounds", "write_csv",
]
