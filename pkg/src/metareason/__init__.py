"""Strategy-selection control loop for step-wise LLM reasoning.

A contextual bandit scores high-level reasoning strategies against
progress-report embeddings; the chosen strategy steers the next
chain-of-thought step, and a composite reward over evaluator judgments
feeds the bandit back.
"""
from .bandit import BanditConfig, LinUcbBandit, init_bandit
from .catalog import CatalogConfig, Strategy, StrategyCatalog, build_bandit_and_catalog
from .orchestrator import OrchestratorConfig, ReasoningTrace, run_task
from .reward import RewardWeights, compute_reward, parse_evaluator_output

__version__ = "0.1.0"

__all__ = [
    "BanditConfig",
    "LinUcbBandit",
    "init_bandit",
    "CatalogConfig",
    "Strategy",
    "StrategyCatalog",
    "build_bandit_and_catalog",
    "OrchestratorConfig",
    "ReasoningTrace",
    "run_task",
    "RewardWeights",
    "compute_reward",
    "parse_evaluator_output",
    "__version__",
]
