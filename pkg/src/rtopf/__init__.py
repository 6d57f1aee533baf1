"""Safe reinforcement learning for real-time AC optimal power flow."""

__version__ = "0.1.0"
