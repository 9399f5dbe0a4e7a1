"""mcpsim: a deterministic model-controller-presenter routing simulator.

Three simulated functional modules (cluster-gated reasoning, budgeted
generation, indexed retrieval) run under a learned or scripted routing
policy, with full latency, FLOP, and energy accounting and an
interpretable per-step trace.
"""

from .config import RunConfig, load_config
from .controller import RewardParams, RoutingAction, Td3Config
from .engine import Engine, EngineParams
from .tasks import ComplexityVector, Task, WorkloadSpec, complexity, generate_workload

__version__ = "0.1.0"

__all__ = [
    "ComplexityVector",
    "Engine",
    "EngineParams",
    "RewardParams",
    "RoutingAction",
    "RunConfig",
    "Task",
    "Td3Config",
    "WorkloadSpec",
    "complexity",
    "generate_workload",
    "load_config",
    "__version__",
]
