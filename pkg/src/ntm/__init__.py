"""Network transport model of tau spread on a directed weighted graph."""

__version__ = "0.1.0"
