"""Semantic-integrity auditing for client-server networked virtual environments."""

from .audit_server import AuditServer, AuditStrategy, AuditTooEarly, schedule_audits, window_start
from .client import BehaviorScript, CheatKind, CheatProfile, Client
from .harness import Scenario, detection_experiment, load_scenario, parse_scenario, run, tunnel_scenario
from .records import AuditEvidence, AuditReport, Check, Reason
from .state_server import StateServer
from .world import (
    AbstractDiff,
    AbstractState,
    CellGrid,
    ConcreteDiff,
    ConcreteState,
    Position,
    RegionId,
)

__version__ = "0.1.0"

__all__ = [
    "AbstractDiff", "AbstractState", "AuditEvidence", "AuditReport", "AuditServer",
    "AuditStrategy", "AuditTooEarly", "BehaviorScript", "CellGrid", "CheatKind",
    "CheatProfile", "Check", "Client", "ConcreteDiff", "ConcreteState", "Position",
    "Reason", "RegionId", "Scenario", "StateServer", "detection_experiment",
    "load_scenario", "parse_scenario", "run", "schedule_audits", "tunnel_scenario",
    "window_start",
]
