"""Finite element laboratory for the Stokes problem in Muckenhoupt-weighted spaces."""

__version__ = "0.1.0"
