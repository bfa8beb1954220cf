"""Skill co-occurrence networks and their multiscale Markov Stability clusters."""

__version__ = "0.1.0"
