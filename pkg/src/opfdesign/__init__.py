"""Multi-objective search over RL environment designs for optimal power flow tasks."""

from .design import DesignSpace, EnvDesign, baseline_design
from .environment import NormStats, OpfEnv, calibrate_normalization, compute_reward, map_action
from .grid import Grid, GridState, PowerFlowSolution, run_power_flow
from .metrics import EvalReport, MetricPair, evaluate_policy
from .problems import BENCHMARK_KINDS, OpfProblem, ScaleConfig, make_benchmark
from .search import Study, StudyConfig, extract_design, pareto_front, run_study

__version__ = "0.1.0"

__all__ = [
    "BENCHMARK_KINDS",
    "DesignSpace",
    "EnvDesign",
    "EvalReport",
    "Grid",
    "GridState",
    "MetricPair",
    "NormStats",
    "OpfEnv",
    "OpfProblem",
    "PowerFlowSolution",
    "ScaleConfig",
    "Study",
    "StudyConfig",
    "baseline_design",
    "calibrate_normalization",
    "compute_reward",
    "evaluate_policy",
    "extract_design",
    "make_benchmark",
    "map_action",
    "pareto_front",
    "run_power_flow",
    "run_study",
    "__version__",
]
