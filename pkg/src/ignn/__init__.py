"""Graph neural networks with an edge-information maximizing objective."""

__version__ = "0.1.0"
