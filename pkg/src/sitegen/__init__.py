"""Flow-matching docking and binding-site design with a harmonic prior."""

__version__ = "0.1.0"
