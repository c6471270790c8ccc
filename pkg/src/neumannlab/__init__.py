"""Probabilistic and deterministic solvers for parabolic Neumann problems with divergence terms."""

from __future__ import annotations

__version__ = "0.1.0"
