"""Continual knowledge graph embedding with drift- and interference-aware evaluation."""
__version__ = "0.1.0"
