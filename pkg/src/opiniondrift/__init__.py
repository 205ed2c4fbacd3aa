"""Eulerian bounded-confidence opinion dynamics with exogenous inputs."""

from .analysis import (
    AttractionRangeResult,
    LinearFit,
    StrategyReport,
    attraction_range,
    compare_strategies,
    positive_mass,
    sweep_fit,
)
from .errors import (
    AllAtomic,
    ConfigError,
    DegenerateWindow,
    HorizonExceeded,
    InsufficientPoints,
    MonotonicityViolation,
    NoBasin,
    NotConverged,
    OpinionDriftError,
    StepError,
)
from .flow import FlowContext, bilipschitz_estimate, flow_map, push_forward
from .inputs import InputSchedule, TruncatedGaussianInput, input_window_moments, make_truncated_gaussian, schedule_at
from .measure import ClusterSet, OpinionPartition, density_bounds, extract_clusters, from_atoms, from_uniform, window_moments
from .oracle import AgentPopulation, agent_run, agent_step, sample_agents
from .simulate import SimulationConfig, Trajectory, run, step

__version__ = "0.1.0"
