"""Deep state-space human motion prediction."""

__version__ = "0.1.0"
