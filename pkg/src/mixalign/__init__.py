"""Domain-mixture design for aligning a base LM with a target in log-likelihood space."""

__version__ = "0.1.0"
