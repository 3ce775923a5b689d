"""Joint reconstruction of dynamic complex MRI images and complex optical-flow velocities."""

__version__ = "0.1.0"
