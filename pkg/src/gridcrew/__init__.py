"""Repair-crew dispatch after storms: fault beliefs, routing MDP, guided tree search and self-play."""

__version__ = "0.1.0"
