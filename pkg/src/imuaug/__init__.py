"""Synthetic IMU trip generation with a recurrent conditional GAN, scored by a
semi-supervised driving-style classifier."""

__version__ = "0.1.0"
