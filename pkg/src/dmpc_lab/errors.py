"""Exception hierarchy shared by every module of the lab."""

from __future__ import annotations


class DmpcLabError(Exception):
    """Base class for all errors raised by dmpc_lab."""


class DimensionMismatch(DmpcLabError, ValueError):
    pass


# -- topology -----------------------------------------------------------------


class InvalidEdge(DmpcLabError, ValueError):
    pass


class DisconnectedGraph(DmpcLabError, ValueError):
    pass


class AsymmetricWeights(DmpcLabError, ValueError):
    """Adjacent agents have different degrees, so a_ij != a_ji."""


class EigenSolverFailure(DmpcLabError, RuntimeError):
    pass


# -- design -------------------------------------------------------------------


class NotStabilizable(DmpcLabError, ValueError):
    pass


class InvalidHorizon(DmpcLabError, ValueError):
    pass


class EmptyTightenedSet(DmpcLabError, ValueError):
    def __init__(self, bounds):
        self.bounds = list(bounds)
        super().__init__(f"tightened input bounds are not positive: {self.bounds}")


# -- network ------------------------------------------------------------------


class DelayOutOfRange(DmpcLabError, ValueError):
    pass


class NoCommonStamp(DmpcLabError, RuntimeError):
    pass


class StampMismatch(DmpcLabError, ValueError):
    pass


# -- dmpc ---------------------------------------------------------------------


class TubePreconditionViolated(DmpcLabError, RuntimeError):
    pass


class Infeasible(DmpcLabError, RuntimeError):
    pass


class StaleSolution(DmpcLabError, ValueError):
    pass


# -- cli / io -----------------------------------------------------------------


class ParseError(DmpcLabError, ValueError):
    pass


class SchemaError(DmpcLabError, ValueError):
    pass


class MalformedTrace(DmpcLabError, ValueError):
    pass
