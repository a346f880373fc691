"""Collaborative policy learning: a path-finding reasoner and a fact extractor trained together."""

from .config import Config, load_config
from .graph import KnowledgeGraph, Triple

__all__ = ["Config", "KnowledgeGraph", "Triple", "load_config"]
__version__ = "0.1.0"
