"""Cross-corpora spoken language identification workbench."""

__version__ = "0.1.0"
