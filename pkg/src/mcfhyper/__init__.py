"""Discrete-mode simulator for hyper-entangled photon pairs in a multicore fiber."""

__version__ = "0.1.0"
