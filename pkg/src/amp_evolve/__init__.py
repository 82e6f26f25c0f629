"""Approximate message passing with state-evolution predictions and
finite-n verification tools for matrices with independent,
non-identically distributed entries."""

__version__ = "0.1.0"
