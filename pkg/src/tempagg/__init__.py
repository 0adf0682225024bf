"""Multi-granular temporal aggregation of snippet features for video understanding."""

__version__ = "0.1.0"
