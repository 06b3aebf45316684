"""DelayWalk - simulate and verify delayed non-local diffusion."""

__version__ = "1.0.0"
