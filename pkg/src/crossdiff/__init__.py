"""Structure-preserving simulator for two-species cross-diffusion systems."""

__version__ = "0.1.0"
