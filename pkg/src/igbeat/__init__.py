"""Inverse Gaussian point-process modelling of R-R intervals with recurrent backbones."""

__version__ = "0.1.0"
