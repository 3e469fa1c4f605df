"""Active learning with epistemic neural networks."""

__version__ = "0.1.0"
