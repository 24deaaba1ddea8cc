"""Multi-level economic estimation from tile scores, district features and scaling factors."""

__version__ = "0.1.0"
