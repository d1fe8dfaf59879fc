"""Domain error hierarchy.

Every failure the library can diagnose maps to one subclass so callers
(and the CLI) can translate them into machine-readable payloads.
"""
from __future__ import annotations


class MimuError(Exception):
    """Base class for all domain errors raised by this package."""

    def payload(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class DegenerateMotion(MimuError):
    """Motion does not excite the quantity being estimated."""


class NotConverged(MimuError):
    """Iterative solver hit its iteration limit without meeting tolerances."""


class BoundaryIndex(MimuError):
    """Sample index has no two-sided neighborhood (first or last sample)."""


class SingularFusion(MimuError):
    """Fusion design matrices cannot be inverted with the given geometry/noise."""


class SingularNormalEquations(MimuError):
    """Normal equations are numerically singular."""


class FormatError(MimuError):
    """File contents violate the documented format."""


class RateMismatch(MimuError):
    """Sample rates (or sample grids) of jointly processed series disagree."""


class EmptyOverlap(MimuError):
    """Series share no common time window."""


class LengthMismatch(MimuError):
    """Paired sequences have different lengths."""
