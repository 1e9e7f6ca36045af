"""Parameter identification for transient wall heat conduction with DF and RC direct models."""

__version__ = "0.1.0"
