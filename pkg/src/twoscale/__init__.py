"""Two-scale finite-element simulator for upscaled filtration combustion."""

__version__ = "0.1.0"
