"""Multi-label classification of how-to instruction texts with small from-scratch transformers."""

__version__ = "0.1.0"
