"""Quadrilateral finite elements for the planar relaxed micromorphic continuum."""

__version__ = "0.1.0"
