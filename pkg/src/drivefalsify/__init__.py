"""Search-based falsification of a cruise controller against functional and
drivability requirements."""

__version__ = "0.1.0"
