"""Level-set parameters of signed-distance networks as a shape representation."""

__version__ = "0.1.0"
