"""Deterministic MLP training engine with binary layers, uniform bias
initialization and hyperplane-geometry audits."""

__version__ = "0.1.0"
