"""Preference-based RL workbench: contrastive set encoder rewards, BT baselines,
offline IQL, shaped DDPG and evaluation statistics on small simulated tasks."""

__version__ = "0.1.0"
