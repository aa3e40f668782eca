"""Byzantine-robust sensor fusion: transmit-then-verify simulator and analysis."""

__version__ = "0.1.0"
