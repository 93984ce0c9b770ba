"""Regenerative stopping for shipment consolidation.

Orders with weights arrive over time; after each arrival a controller either
waits (paying delay per held order per day) or ships everything (paying a
concave fee in the truck load).  The package holds the simulator, arrival
generators and estimators, an average-cost MDP solver, a hindsight oracle,
an MLP policy with imitation and policy-gradient trainers, and a benchmark CLI.
"""

from .arrival import ArrivalModel, GeneratorSpec, OrderSequence, estimate, generate, load_sequences, save_sequences
from .core import (
    S0,
    Action,
    BaselinePolicy,
    CostBreakdown,
    CostModel,
    EpisodeStats,
    FeeCurve,
    Policy,
    SystemState,
    TimedDataPoint,
    simulate,
)
from .hindsight import HindsightResult, expert_action, hindsight
from .imitation import ImitationConfig, imitate_expert
from .mdp import GridPolicy, ModelBasedController, solve
from .nn import NeuralPolicy, SupervisedConfig, train_supervised

__version__ = "0.1.0"

__all__ = [
    "S0",
    "Action",
    "ArrivalModel",
    "BaselinePolicy",
    "CostBreakdown",
    "CostModel",
    "EpisodeStats",
    "FeeCurve",
    "GeneratorSpec",
    "GridPolicy",
    "HindsightResult",
    "ImitationConfig",
    "ModelBasedController",
    "NeuralPolicy",
    "OrderSequence",
    "Policy",
    "SupervisedConfig",
    "SystemState",
    "TimedDataPoint",
    "estimate",
    "expert_action",
    "generate",
    "hindsight",
    "imitate_expert",
    "load_sequences",
    "save_sequences",
    "simulate",
    "solve",
    "train_supervised",
]
