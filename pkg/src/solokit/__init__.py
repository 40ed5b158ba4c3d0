"""SOLO instance-segmentation toolkit: Matrix NMS and friends, grid label
assignment, mask assembly, losses with analytic gradients, and metrics."""

__version__ = "0.1.0"
