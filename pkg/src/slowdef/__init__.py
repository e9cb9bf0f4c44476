"""Detection of slow, sustained ground deformation in rewrapped InSAR imagery."""

__version__ = "0.1.0"
