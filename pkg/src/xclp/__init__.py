"""Cross-client label propagation."""

__version__ = "0.1.0"
