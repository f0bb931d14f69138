"""Flow-based voice anonymization toolkit on a synthetic speaker world."""

__version__ = "0.1.0"
