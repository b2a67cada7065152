"""Privacy-utility tradeoff toolkit for testing against independence over a noisy channel."""

__version__ = "0.1.0"
