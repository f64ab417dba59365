"""Trajectory-based road autolabeling with lidar-camera fusion."""

__version__ = "0.1.0"
