"""Multiscale Hilbert expansion toolkit for the half-space Boltzmann equation with specular reflection."""

__version__ = "0.1.0"
