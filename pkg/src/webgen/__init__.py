"""Generative modelling of 3D spider-web graphs: statistics, z-space codecs,
numpy diffusion and transformer generators, assembly and meshing."""

__version__ = "0.1.0"
