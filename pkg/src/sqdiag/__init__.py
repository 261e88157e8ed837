"""Sample-based quantum diagonalization with configuration recovery and orbital optimization."""

__version__ = "0.1.0"
