"""Hardware-aware transformer design-space exploration on synthetic edge devices."""

__version__ = "0.1.0"
