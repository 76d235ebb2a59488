"""Staged image pipelines on a small metered map-reduce engine."""

__version__ = "0.1.0"
