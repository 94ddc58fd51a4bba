"""Point-cloud free-form deformation, distance metrics, fitting and retrieval."""

__version__ = "0.1.0"
