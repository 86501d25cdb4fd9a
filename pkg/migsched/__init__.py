"""Fragmentation-aware scheduling of MIG GPU profiles on a simulated A100 cluster."""

__version__ = "0.1.0"
