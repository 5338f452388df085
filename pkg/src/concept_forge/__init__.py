"""Learning new visual concepts from text descriptions on a toy dual encoder."""

__version__ = "0.1.0"
