"""Simulation and dispatch scheduling of crop-transport robots serving a harvest crew."""

from __future__ import annotations

__version__ = "0.1.0"
