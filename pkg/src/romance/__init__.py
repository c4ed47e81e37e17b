"""Desk-scale lab for robust cooperative multi-agent RL under budget-limited
action attacks: evolutionary attacker populations, value-decomposition team
learners, baselines, and exact tabular oracles."""

__version__ = "0.1.0"
