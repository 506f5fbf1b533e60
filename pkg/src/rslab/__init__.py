"""Reasoning-shortcut lab: count, enumerate and probe reasoning shortcuts in NeSy tasks."""

__version__ = "0.1.0"
