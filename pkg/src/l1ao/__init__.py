"""Time-varying convex optimization with L1 adaptive augmentation."""

__version__ = "0.1.0"
