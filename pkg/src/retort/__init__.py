"""retort: 1-D/0-D bioreactive transport driven by a text input deck."""

__version__ = "0.1.0"
