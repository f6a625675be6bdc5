"""Robust DMPC consensus of linear multi-agent systems under bounded broadcast delays."""

from __future__ import annotations

from ._accel import backend_name
from .design import FeasibilityCertificate, TerminalSpec, TubeSpec, certify
from .dmpc import DmpcProblem, DmpcSolution, SolverSettings, candidate, cost, rollout, solve
from .dynamics import AgentModel, input_admissible, step
from .network import AssumedTrajectory, BroadcastMessage, DelayProcess, Mailbox, build_assumed
from .topology import Topology, build_topology

__all__ = [
    "AgentModel",
    "AssumedTrajectory",
    "BroadcastMessage",
    "DelayProcess",
    "DmpcProblem",
    "DmpcSolution",
    "FeasibilityCertificate",
    "Mailbox",
    "SolverSettings",
    "TerminalSpec",
    "Topology",
    "TubeSpec",
    "backend_name",
    "build_assumed",
    "build_topology",
    "candidate",
    "certify",
    "cost",
    "input_admissible",
    "rollout",
    "solve",
    "step",
]
