"""Conversational semantic parsing toolkit for tree-structured dialog state tracking."""

__version__ = "0.1.0"
