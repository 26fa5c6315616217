from .materials import MaterialParams, MaterialTable, MATERIAL_SAND, MATERIAL_SNOW, MATERIAL_ELASTIC
from .pool import ParticlePool
from .grid import GridLevel
from .solver import UniformSolver

__all__ = [
    "MaterialParams",
    "MaterialTable",
    "MATERIAL_SAND",
    "MATERIAL_SNOW",
    "MATERIAL_ELASTIC",
    "ParticlePool",
    "GridLevel",
    "UniformSolver",
]
