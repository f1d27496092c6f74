"""Online continual learning for endpoint forecasting with reservoir memory,
gradient-similarity rehearsal and gradient projection."""

from .estimator import ContinualEndpointRegressor, STRATEGIES
from .harness import RunRecord, Seeds, StrategyConfig, report, run_experiment, run_jotr
from .memory import LongTermBuffer, Sample, TemporalBuffer
from .metrics import ResultMatrix, bwt, ct, fwt, joint_test
from .net import EndpointMLP, NetConfig, OptimizerState, init_network, optimizer_step, wta_loss
from .projection import ProjectionOutcome, project
from .rehearsal import cosine_score, select_rehearsal
from .stream import StreamConfig, TaskSpec, build_stream, generate_task, load_csv

__all__ = [
    "ContinualEndpointRegressor", "STRATEGIES", "RunRecord", "Seeds", "StrategyConfig", "report",
    "run_experiment", "run_jotr", "LongTermBuffer", "Sample", "TemporalBuffer", "ResultMatrix",
    "bwt", "ct", "fwt", "joint_test", "EndpointMLP", "NetConfig", "OptimizerState",
    "init_network", "optimizer_step", "wta_loss", "ProjectionOutcome", "project",
    "cosine_score", "select_rehearsal", "StreamConfig", "TaskSpec", "build_stream",
    "generate_task", "load_csv",
]

__version__ = "0.1.0"
