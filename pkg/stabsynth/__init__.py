"""Mean-square stabilizing feedback synthesis for stochastic linear systems."""

__version__ = "1.0.0"
