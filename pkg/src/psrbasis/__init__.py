"""Spectral learning of predictive state representations with
entropy-guided basis selection."""

__version__ = "0.1.0"
