"""Seedable edge-cloud continuum simulator with learned and rule-based
workload placement."""

from .config import (PlacementDecision, PowerProfile, Status, Path,
                     SystemConfig, Topology, Weights, Workload,
                     WorkloadOutcome, desk_config, load_config,
                     paper_scale_config, save_config, validate_config)
from .env import ContinuumEnv, SlotReport, run_episode
from .telemetry import LoadMatrix, TelemetryService
from .forecaster import LoadForecaster, PeekForecaster, ReactiveForecaster
from .policies import POLICY_NAMES, make_policy
from .agent import (ActionCodec, DuelingQNet, LearnedPolicy,
                    MultiAgentTrainer, TrainingParams, epsilon_schedule,
                    outcome_cost)
from .harness import (Campaign, MetricsRow, evaluate_policy, run_campaign,
                      sweep_plots)

__version__ = "0.1.0"
