"""Agent-in-cell epidemic simulator with tessellated mobility and super-agents."""

__version__ = "0.1.0"
