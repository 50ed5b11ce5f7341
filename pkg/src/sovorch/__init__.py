"""Sustainability-constrained placement and routing of compute workloads."""

__version__ = "0.1.0"
