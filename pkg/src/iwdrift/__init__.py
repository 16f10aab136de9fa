"""Batched IWD vehicle simulation, drifting environment and PPO trainer."""

__version__ = "0.1.0"
