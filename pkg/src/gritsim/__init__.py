"""gritsim: spatially adaptive MLS-MPM for large granular scenes.

The engine concentrates resolution in nested grids around a moving agent
and keeps particle sizes matched to their local grid through
momentum-conserving split/merge resampling.  On top of the solver sit
manipulation task environments, a CMA-ES trajectory optimizer and a
benchmark harness.
"""

__version__ = "0.1.0"

from .engine import BoundaryConfig, BoxBody, HeapBody, Scene, seed_bodies, settle
from .mpm import MaterialParams, MaterialTable, ParticlePool, UniformSolver
from .adaptive import AdaptiveSolver, HierarchicalGrid
from .tools import SdfPrimitive, Tool

__all__ = [
    "Scene",
    "BoundaryConfig",
    "BoxBody",
    "HeapBody",
    "seed_bodies",
    "settle",
    "MaterialParams",
    "MaterialTable",
    "ParticlePool",
    "UniformSolver",
    "AdaptiveSolver",
    "HierarchicalGrid",
    "SdfPrimitive",
    "Tool",
    "__version__",
]
