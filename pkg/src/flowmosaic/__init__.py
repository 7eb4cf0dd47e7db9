"""Sparse-overlap aerial survey augmentation: optical-flow frame
interpolation, GPS interpolation and orthomosaic reconstruction."""

__version__ = "0.1.0"
