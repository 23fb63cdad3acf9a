"""Curriculum-driven PPO for user association in mobile networks."""

__version__ = "0.1.0"
