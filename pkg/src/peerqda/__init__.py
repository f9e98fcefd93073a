"""Hierarchical LLM qualitative coding with peer-debriefing refinement."""

__version__ = "0.1.0"
