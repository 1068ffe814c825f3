"""Multi-agent availability simulation for reconfigurable networked software systems."""

from .engine import Engine, PMWindow, SimParams, SimulationTrace, compare_runs, run, run_replications
from .metrics import TimeCounters, availability_series, compare, compare_series, operational_availability
from .model import (
    AgentId,
    BusinessAgent,
    ComponentAgent,
    ConnectorAgent,
    Kind,
    ReconfigModel,
    ReconfigRule,
    ServiceAgent,
    Status,
    SystemModel,
    com,
    con,
    support_closure,
    validate,
)
from .scenario import GenParams, generate, load, save

__version__ = "0.1.0"
