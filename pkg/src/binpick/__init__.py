"""Simulation-trained bin picking: fitted-box physics, CNN scoring, grasp search."""

from .backend import BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"
