"""Optimum sensor activation design for identifying the interface of an
inclusion in a 2D diffusion process.

Pipeline: tagged mesh generation, P1 backward-Euler forward and shape
sensitivity solves, Fisher information assembly with correlated measurement
noise, and A-optimal activation weights by simplicial decomposition on the
restricted simplex, followed by a generalized eigen-analysis of
identifiability.
"""

from . import config, fem, fim, mesh, mesh_io, numerics, oed, pipeline, shape

__all__ = [
    "config",
    "fem",
    "fim",
    "mesh",
    "mesh_io",
    "numerics",
    "oed",
    "pipeline",
    "shape",
]

__version__ = "0.1.0"
