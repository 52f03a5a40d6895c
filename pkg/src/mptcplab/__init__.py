"""Deterministic packet-level simulator for multipath TCP congestion
control under distributed edge-learning workloads.

Core pieces: a discrete-event engine with drop-tail full-duplex paths
(`core`), coupled-LIA / CUBIC / learned-controller endpoints (`transport`),
a small numpy neural toolkit (`nnet`), the slot-clocked learning agent
(`agent`), the download/compute/upload worker machinery and fairness
metrics (`workload`), and scenario plumbing (`scenario`, `presets`,
`runner`, `cli`).
"""

from .core import Engine, Path, PathConfig, SimulationError
from .transport import CUBIC, DRL, HYBRID, LIA, MptcpConnection
from .agent import AgentNetworks, ConnectionAgent
from .workload import ParallelismScheme, RunMetrics, Worker
from .scenario import Scenario, ScenarioError, load_scenario
from .runner import RunResult, TrainResult, run_scenario, train_agent

__version__ = "0.1.0"

__all__ = [
    "AgentNetworks", "ConnectionAgent", "CUBIC", "DRL", "Engine", "HYBRID",
    "LIA", "MptcpConnection", "ParallelismScheme", "Path", "PathConfig",
    "RunMetrics", "RunResult", "Scenario", "ScenarioError", "SimulationError",
    "TrainResult", "Worker", "load_scenario", "run_scenario", "train_agent",
    "__version__",
]
