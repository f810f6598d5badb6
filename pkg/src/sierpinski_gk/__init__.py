"""Interacting particle systems on the Sierpinski gasket and their reaction-diffusion limits."""

__version__ = "0.1.0"
