"""Long-time behaviour of flows on the torus: rotation vectors and sets,
occupation measures, cell problems and transport homogenization."""

__version__ = "0.1.0"
