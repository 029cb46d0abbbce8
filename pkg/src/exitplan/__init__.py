"""Plan early-exit augmentation of a backbone network across a chain of processors."""

from .decision import (
    BaseMetrics,
    CascadeCosts,
    ThresholdConfig,
    ThresholdGrid,
    Weights,
    build_search_graph,
    exhaustive_thresholds,
    predict_cascade,
    solve_thresholds,
)
from .exits import build_exit_branch, enumerate_exit_locations
from .graph_ir import (
    ModelGraphError,
    extract_classifier_blueprint,
    fuse_blocks,
    load_model_graph,
    parse_model_graph,
)
from .hw_model import load_platform, parse_platform, worst_case_latency
from .planner import InfeasibleError, PlanOptions, dump_report, run_search
from .profiles import load_records, profile_exit
from .search_space import count_architectures, enumerate_architectures, map_to_processors
from .simulate import compare, simulate_cascade
from .synth import generate_synthetic_profiles

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
