"""Stylistic fingerprint verification: learn an artist's style hypersphere and test suspect images against it."""

__version__ = "0.1.0"
