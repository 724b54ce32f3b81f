"""Location, trajectory and POI privacy accounting for continuous LBS use."""

__version__ = "0.1.0"
