"""Online train/no-train decisions for a drifting regression stream.

A deep-ensemble learner adapts online to a synthetic stream; a small
decision net predicts the relative loss improvement a training step would
buy and trains only when that beats the cost weight ``1/alpha``.
"""
from .config import ExperimentConfig, load_config
from .cost import CostLedger, CostModel, flops_of, total_cost
from .decision import (
    Action,
    DecisionBuffers,
    DecisionNet,
    assemble_features,
    decision_loss,
    greedy_decide,
    load_decision_net,
    online_update_decision,
    save_decision_net,
)
from .exceptions import (
    ConfigurationError,
    DecTrainError,
    MissingBaselineError,
    SchemaError,
    StateError,
    TraceParseError,
    UndefinedRecoveryError,
)
from .learner import EnsembleLearner, nll_loss
from .metrics import aggregate_sweep, decision_kl, delta1, recovery
from .policies import (
    AllTrain,
    DecTrain,
    FixedPeriodic,
    GreedyOracle,
    NoTrain,
    TimestepRecord,
    decisions,
    run_episode,
)
from .pretraining import collect_pretraining_dataset, pretrain_decision, pretrained_learner
from .stream import EnvironmentSpec, StreamSample, generate_stream, read_trace, write_trace
from .trainer import LearnerReplayBuffer, relative_utility, train_step

__version__ = "0.1.0"

__all__ = [
    "Action", "AllTrain", "ConfigurationError", "CostLedger", "CostModel", "DecTrain", "DecTrainError",
    "DecisionBuffers", "DecisionNet", "EnsembleLearner", "EnvironmentSpec", "ExperimentConfig",
    "FixedPeriodic", "GreedyOracle", "LearnerReplayBuffer", "MissingBaselineError", "NoTrain",
    "SchemaError", "StateError", "StreamSample", "TimestepRecord", "TraceParseError",
    "UndefinedRecoveryError", "aggregate_sweep", "assemble_features", "collect_pretraining_dataset",
    "decision_kl", "decision_loss", "decisions", "delta1", "flops_of", "generate_stream", "greedy_decide",
    "load_config", "load_decision_net", "nll_loss", "online_update_decision", "pretrain_decision",
    "pretrained_learner", "read_trace", "recovery", "relative_utility", "run_episode",
    "save_decision_net", "total_cost", "train_step", "write_trace",
]
