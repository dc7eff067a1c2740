"""Continual-learning engine with mask-isolated sub-networks, online task
similarity detection, forward/backward knowledge transfer, and a benchmark
harness."""

__version__ = "0.1.0"
