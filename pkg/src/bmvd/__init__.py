"""Numerical laboratory for Brownian motion on two Euclidean spaces glued at a point."""

from bmvd.space import GluedPoint, Part, SpaceParams

__all__ = ["GluedPoint", "Part", "SpaceParams"]
__version__ = "0.1.0"
