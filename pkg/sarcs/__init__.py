"""sarcs: compressive SAR phase histories, focusing, and diffusion-based ghost suppression."""

__version__ = "0.1.0"
